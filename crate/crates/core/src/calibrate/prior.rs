//! Location/size prior over (x-centre, y-centre, log-area) and the score
//! augmentation that adds a weighted log-prior to the raw detector score.

use serde::{Deserialize, Serialize};

use crate::calibrate::eval::{ap_with_scores, EvalImage};
use crate::error::{Error, Result};
use crate::ingest::{BBox, ImageDims};

pub const DEFAULT_BINS_PER_AXIS: usize = 20;

/// Smoothed 3-D histogram. Every bin starts at a pseudo-count of one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrior {
    bins_per_axis: usize,
    counts: Vec<u64>,
    log_area_min: f64,
    log_area_max: f64,
    alpha: f64,
}

fn axis_bin(value: f64, lo: f64, hi: f64, n: usize) -> usize {
    if !(hi > lo) || !value.is_finite() {
        return 0;
    }
    let t = ((value - lo) / (hi - lo) * n as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

impl LocationPrior {
    /// Uniform prior (all pseudo-counts) over the given log-area range.
    pub fn uniform(bins_per_axis: usize, log_area_min: f64, log_area_max: f64) -> Result<Self> {
        if bins_per_axis == 0 {
            return Err(Error::arg("bins_per_axis must be positive"));
        }
        Ok(LocationPrior {
            bins_per_axis,
            counts: vec![1; bins_per_axis.pow(3)],
            log_area_min,
            log_area_max,
            alpha: 0.0,
        })
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins_per_axis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn log_area_range(&self) -> (f64, f64) {
        (self.log_area_min, self.log_area_max)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Flat bin index of a box: `(x_bin * n + y_bin) * n + area_bin`.
    pub fn bin_of(&self, bbox: &BBox, dims: ImageDims) -> usize {
        let n = self.bins_per_axis;
        let ix = axis_bin(bbox.x_center / dims.width as f64, 0.0, 1.0, n);
        let iy = axis_bin(bbox.y_center / dims.height as f64, 0.0, 1.0, n);
        let ia = axis_bin(bbox.area().ln(), self.log_area_min, self.log_area_max, n);
        (ix * n + iy) * n + ia
    }

    pub fn bin_probability(&self, bin: usize) -> f64 {
        self.counts[bin] as f64 / self.total() as f64
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Natural log of the probability of the box's bin.
    pub fn log_prob(&self, bbox: &BBox, dims: ImageDims) -> f64 {
        self.bin_probability(self.bin_of(bbox, dims)).ln()
    }

    /// `raw_score + alpha * log P(x, y, log area)`.
    pub fn augment_score(&self, raw_score: f64, bbox: &BBox, dims: ImageDims) -> f64 {
        raw_score + self.alpha * self.log_prob(bbox, dims)
    }

    /// Checks a deserialised prior.
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_axis == 0 || self.counts.len() != self.bins_per_axis.pow(3) {
            return Err(Error::Validation("prior count array does not match bins_per_axis".into()));
        }
        if self.counts.contains(&0) {
            return Err(Error::Validation("prior bins must hold at least the pseudo-count".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha {} must be non-negative", self.alpha)));
        }
        Ok(())
    }
}

pub fn prior_log_prob(prior: &LocationPrior, bbox: &BBox, dims: ImageDims) -> f64 {
    prior.log_prob(bbox, dims)
}

pub fn augment_score(prior: &LocationPrior, raw_score: f64, bbox: &BBox, dims: ImageDims) -> f64 {
    prior.augment_score(raw_score, bbox, dims)
}

/// Fits the prior from training boxes.
///
/// x and y centres are normalised by image size; log-area is binned over the
/// observed training range and clamps at inference.
pub fn fit_location_prior(boxes: &[(BBox, ImageDims)], bins_per_axis: usize) -> Result<LocationPrior> {
    if bins_per_axis == 0 {
        return Err(Error::arg("bins_per_axis must be positive"));
    }
    let (lo, hi) = boxes
        .iter()
        .map(|(b, _)| b.area().ln())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if boxes.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let mut prior = LocationPrior::uniform(bins_per_axis, lo, hi)?;
    for (b, dims) in boxes {
        let bin = prior.bin_of(b, *dims);
        prior.counts[bin] += 1;
    }
    Ok(prior)
}

/// Result of the alpha search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub ap: f64,
    /// `(alpha, AP)` for every grid value, in grid order.
    pub curve: Vec<(f64, f64)>,
}

impl AlphaFit {
    pub fn ap_at(&self, alpha: f64) -> Option<f64> {
        self.curve.iter().find(|(a, _)| *a == alpha).map(|&(_, ap)| ap)
    }
}

/// `0.0, 0.1, ..., 2.0`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

/// Picks the grid alpha maximising AP of augmented scores; ties go to the smaller alpha.
pub fn learn_alpha(
    prior: &LocationPrior,
    validation: &[EvalImage],
    iou_threshold: f64,
    grid: &[f64],
) -> Result<AlphaFit> {
    if grid.is_empty() {
        return Err(Error::arg("alpha grid is empty"));
    }
    if let Some(a) = grid.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::arg(format!("alpha {a} must be non-negative")));
    }
    let log_priors: Vec<Vec<f64>> =
        validation.iter().map(|im| im.detections.iter().map(|d| prior.log_prob(&d.bbox, im.dims)).collect()).collect();

    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let ap = ap_with_scores(validation, iou_threshold, |i, d| {
            validation[i].detections[d].score + alpha * log_priors[i][d]
        })?;
        curve.push((alpha, ap));
        best = match best {
            Some((ba, bap)) if bap > ap || (bap == ap && ba <= alpha) => Some((ba, bap)),
            _ => Some((alpha, ap)),
        };
    }
    let (alpha, ap) = best.expect("non-empty grid");
    Ok(AlphaFit { alpha, ap, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::eval::ScoredBox;

    const DIMS: ImageDims = ImageDims { width: 640, height: 480 };

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn empty_training_set_is_uniform() {
        let p = fit_location_prior(&[], 20).unwrap();
        assert_eq!(p.counts().len(), 8000);
        for prob in p.probabilities() {
            assert_eq!(prob, 1.0 / 8000.0);
        }
        let lp = p.log_prob(&b(10.0, 10.0, 5.0, 5.0), DIMS);
        assert!((lp - (1.0f64 / 8000.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn identical_boxes_share_one_bin() {
        let n = 37;
        let boxes = vec![(b(100.0, 300.0, 60.0, 40.0), DIMS); n];
        let p = fit_location_prior(&boxes, 20).unwrap();
        let bin = p.bin_of(&boxes[0].0, DIMS);
        assert_eq!(p.bin_probability(bin), (n as f64 + 1.0) / (n as f64 + 8000.0));
    }

    #[test]
    fn two_boxes_in_distinct_bins() {
        let boxes = [(b(100.0, 100.0, 10.0, 10.0), DIMS), (b(600.0, 400.0, 100.0, 80.0), DIMS)];
        let p = fit_location_prior(&boxes, 20).unwrap();
        let (b0, b1) = (p.bin_of(&boxes[0].0, DIMS), p.bin_of(&boxes[1].0, DIMS));
        assert_ne!(b0, b1);
        assert_eq!(p.bin_probability(b0), 2.0 / 8002.0);
        assert_eq!(p.bin_probability(b1), 2.0 / 8002.0);
        assert_eq!(p.bin_probability(0), 1.0 / 8002.0);
        let total: f64 = p.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_boxes_clamp() {
        let boxes = [(b(20.0, 20.0, 10.0, 10.0), DIMS), (b(600.0, 400.0, 100.0, 80.0), DIMS)];
        let p = fit_location_prior(&boxes, 20).unwrap();
        // huge box beyond the training log-area range lands in the top area bin
        let big = b(600.0, 400.0, 400.0, 400.0);
        assert_eq!(p.bin_of(&big, DIMS), p.bin_of(&boxes[1].0, DIMS));
        // centre outside the image clamps to the last x and y bins
        let off = b(700.0, 500.0, 100.0, 80.0);
        assert_eq!(p.bin_of(&off, DIMS), 7999);
        let tiny = b(-5.0, 20.0, 1.0, 1.0);
        assert_eq!(p.bin_of(&tiny, DIMS), 0);
    }

    #[test]
    fn zero_bins_rejected() {
        assert!(fit_location_prior(&[], 0).is_err());
    }

    #[test]
    fn augment_examples() {
        let boxes = [(b(20.0, 20.0, 10.0, 10.0), DIMS), (b(600.0, 400.0, 100.0, 80.0), DIMS)];
        let p = fit_location_prior(&boxes, 20).unwrap();
        assert_eq!(p.augment_score(1.25, &boxes[0].0, DIMS), 1.25);
        let half = p.clone().with_alpha(0.5);
        // hit bin probability 2/8002
        let expected = 1.25 + 0.5 * (2.0f64 / 8002.0).ln();
        assert!((half.augment_score(1.25, &boxes[0].0, DIMS) - expected).abs() < 1e-12);
        let uniform = fit_location_prior(&[], 20).unwrap().with_alpha(1.0);
        let s = uniform.augment_score(0.3, &boxes[1].0, DIMS);
        assert!((s - (0.3 + (1.0f64 / 8000.0).ln())).abs() < 1e-12);
    }

    fn eval_image(dets: &[(BBox, f64)], truths: &[BBox]) -> EvalImage {
        EvalImage {
            image_id: "v".into(),
            dims: DIMS,
            detections: dets.iter().map(|&(bbox, score)| ScoredBox { bbox, score }).collect(),
            truths: truths.to_vec(),
        }
    }

    #[test]
    fn perfect_ranking_keeps_alpha_zero() {
        let t = b(300.0, 300.0, 80.0, 50.0);
        let fp = b(50.0, 50.0, 30.0, 30.0);
        let prior = fit_location_prior(&[(fp, DIMS), (fp, DIMS)], 20).unwrap();
        let val = [eval_image(&[(t, 2.0), (fp, -1.0)], &[t])];
        let fit = learn_alpha(&prior, &val, 0.5, &default_alpha_grid()).unwrap();
        assert_eq!(fit.alpha, 0.0);
        assert_eq!(fit.ap, 1.0);
        let single = learn_alpha(&prior, &val, 0.5, &[0.3]).unwrap();
        assert_eq!(single.alpha, 0.3);
        assert!(learn_alpha(&prior, &val, 0.5, &[]).is_err());
    }
}
