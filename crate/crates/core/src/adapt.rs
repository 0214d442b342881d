//! Samplers that make clean product-shot training data resemble street-level
//! detections: box-resolution matching, IOU-matched crop jitter and
//! duplication-based rebalancing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{iou, match_image, EvalImage};
use crate::error::{Error, Result};
use crate::ingest::{BBox, ImageDims};

pub const DEFAULT_RESOLUTION_BINS: usize = 35;
pub const DEFAULT_IOU_BINS: usize = 10;
pub const CROP_PROPOSAL_BUDGET: usize = 10_000;
pub const DEFAULT_REBALANCE_FACTOR: u32 = 10;

/// Equal-width histogram, serialized as `(lower edge, probability)` pairs plus
/// the upper edge of the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    bins: Vec<(f64, f64)>,
    upper: f64,
}

/// Histogram over box resolution `sqrt(w * h)` in pixels.
pub type ResolutionHistogram = Histogram;

/// Histogram over detection-truth IOU in `[0, 1]`.
pub type IouHistogram = Histogram;

impl Histogram {
    /// Counts `values` into `bins` equal-width bins over `[lo, hi]`; the last
    /// bin is closed.
    pub fn from_values(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::arg("histogram needs at least one bin"));
        }
        if values.is_empty() {
            return Err(Error::arg("histogram needs at least one value"));
        }
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::arg(format!("bad histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let edge = |k: usize| lo + k as f64 * width;
        let mut counts = vec![0u64; bins];
        for &v in values {
            // the quotient can land one ulp off an edge, so settle against the stored edges
            let mut k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            while k + 1 < bins && v >= edge(k + 1) {
                k += 1;
            }
            while k > 0 && v < edge(k) {
                k -= 1;
            }
            counts[k] += 1;
        }
        let n = values.len() as f64;
        let bins = counts.iter().enumerate().map(|(k, &c)| (edge(k), c as f64 / n)).collect();
        Ok(Histogram { bins, upper: hi })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Validation("histogram has no bins".into()));
        }
        let edges = self.edges();
        if !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("histogram edges must increase".into()));
        }
        let total: f64 = self.bins.iter().map(|b| b.1).sum();
        if (total - 1.0).abs() > 1e-9 || self.bins.iter().any(|b| !(b.1 >= 0.0)) {
            return Err(Error::Validation(format!("histogram probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// All `len() + 1` bin edges.
    pub fn edges(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.0).chain(std::iter::once(self.upper)).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.1).collect()
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        let hi = self.bins.get(k + 1).map(|b| b.0).unwrap_or(self.upper);
        (self.bins[k].0, hi)
    }

    /// Bin holding `v`, or `None` outside the histogram range.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if v < self.bins[0].0 || v > self.upper {
            return None;
        }
        let k = self.bins.partition_point(|b| b.0 <= v);
        Some(k.saturating_sub(1))
    }

    /// Draws a bin index by probability.
    pub fn sample_bin<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &(_, p)) in self.bins.iter().enumerate() {
            if p > 0.0 {
                last_positive = k;
                acc += p;
                if u < acc {
                    return k;
                }
            }
        }
        last_positive
    }
}

/// Resolution histogram over `[min r, max r]`.
///
/// When every box has the same resolution `r` the range widens to
/// `[r / 2, 3r / 2]` so the mass sits in the middle bin.
pub fn fit_resolution_hist(boxes: &[BBox], bins: usize) -> Result<ResolutionHistogram> {
    if boxes.is_empty() {
        return Err(Error::arg("no boxes to fit a resolution histogram"));
    }
    let r: Vec<f64> = boxes.iter().map(BBox::resolution).collect();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (0.5 * lo, 1.5 * lo) };
    Histogram::from_values(&r, bins, lo, hi)
}

/// Draws a resolution: a bin by probability, then a uniform value inside it.
pub fn sample_resolution<R: Rng + ?Sized>(hist: &ResolutionHistogram, rng: &mut R) -> f64 {
    let (lo, hi) = hist.bounds(hist.sample_bin(rng));
    rng.random_range(lo..hi)
}

/// Histogram of IOUs between detections and the truths they match at `threshold`.
pub fn fit_iou_hist(images: &[EvalImage], threshold: f64, bins: usize) -> Result<IouHistogram> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!("IOU threshold {threshold} not in (0,1)")));
    }
    let overlaps: Vec<f64> = images
        .iter()
        .flat_map(|im| match_image(im, threshold).into_iter().filter_map(|m| m.truth.map(|t| t.1)))
        .collect();
    if overlaps.is_empty() {
        return Err(Error::arg("no detection matches a truth box"));
    }
    Histogram::from_values(&overlaps, bins, 0.0, 1.0)
}

/// Crop around `truth` whose IOU with it falls in a bin drawn from `hist`.
///
/// Proposals shift the centre by up to half the box size and scale each side
/// log-uniformly in `[1/2, 2]`, then clamp to the image. When the drawn bin
/// contains IOU 1 the truth itself is proposed first.
pub fn sample_crop<R: Rng + ?Sized>(truth: &BBox, dims: ImageDims, hist: &IouHistogram, rng: &mut R) -> Result<BBox> {
    if !truth.inside(dims) {
        return Err(Error::arg("truth box lies outside the image"));
    }
    let (lo, _) = hist.bounds(0);
    let (_, hi) = hist.bounds(hist.len() - 1);
    if lo < 0.0 || hi > 1.0 {
        return Err(Error::arg(format!("IOU histogram spans [{lo}, {hi}], outside [0, 1]")));
    }
    let k = hist.sample_bin(rng);
    let (lo, hi) = hist.bounds(k);
    let last = k + 1 == hist.len();
    let accept = |o: f64| o >= lo && (o < hi || last && o <= hi);
    if accept(1.0) {
        return Ok(*truth);
    }
    let ln2 = std::f64::consts::LN_2;
    for _ in 0..CROP_PROPOSAL_BUDGET {
        let dx = rng.random_range(-0.5..0.5) * truth.width;
        let dy = rng.random_range(-0.5..0.5) * truth.height;
        let sw = rng.random_range(-ln2..ln2).exp();
        let sh = rng.random_range(-ln2..ln2).exp();
        let proposal = BBox {
            x_center: truth.x_center + dx,
            y_center: truth.y_center + dy,
            width: truth.width * sw,
            height: truth.height * sh,
        };
        let Some(crop) = proposal.clamp_to(dims) else { continue };
        if accept(iou(&crop, truth)) {
            return Ok(crop);
        }
    }
    Err(Error::Sampling(format!("no crop reached IOU bin [{lo}, {hi}) within {CROP_PROPOSAL_BUDGET} proposals")))
}

/// Each street-level id `factor` times (grouped per id), followed by the
/// product ids once each.
pub fn rebalance<T: Clone>(streetview: &[T], product: &[T], factor: u32) -> Result<Vec<T>> {
    if factor == 0 {
        return Err(Error::arg("rebalance factor must be at least 1"));
    }
    let mut out = Vec::with_capacity(streetview.len() * factor as usize + product.len());
    for id in streetview {
        out.extend(std::iter::repeat_n(id.clone(), factor as usize));
    }
    out.extend_from_slice(product);
    Ok(out)
}

/// [`rebalance`] followed by a seeded shuffle that interleaves the two sources.
pub fn rebalance_shuffled<T: Clone>(streetview: &[T], product: &[T], factor: u32, seed: u64) -> Result<Vec<T>> {
    let mut out = rebalance(streetview, product, factor)?;
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Street-level to product count ratio after duplication.
pub fn rebalance_ratio(streetview: usize, product: usize, factor: u32) -> f64 {
    (streetview as f64 * factor as f64) / product as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::ScoredBox;

    fn square(side: f64) -> BBox {
        BBox::new(100.0, 100.0, side, side).unwrap()
    }

    #[test]
    fn identical_boxes_fill_one_bin() {
        let h = fit_resolution_hist(&[square(40.0); 5], 35).unwrap();
        let p = h.probabilities();
        assert_eq!(p.iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(p[17], 1.0);
        h.validate().unwrap();
    }

    #[test]
    fn extremes_land_in_end_bins() {
        let h = fit_resolution_hist(&[square(10.0), square(360.0)], 35).unwrap();
        let p = h.probabilities();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[34], 0.5);
        assert!(fit_resolution_hist(&[], 35).is_err());
    }

    #[test]
    fn scale_covariance() {
        let boxes: Vec<BBox> = (1..50).map(|i| BBox::new(50.0, 50.0, i as f64, (i * 2) as f64).unwrap()).collect();
        let h = fit_resolution_hist(&boxes, 35).unwrap();
        let scaled: Vec<BBox> = boxes.iter().map(|b| b.scaled(3.0)).collect();
        let g = fit_resolution_hist(&scaled, 35).unwrap();
        for (a, b) in h.edges().iter().zip(g.edges()) {
            assert!((a * 3.0 - b).abs() < 1e-9 * b);
        }
        assert_eq!(h.probabilities(), g.probabilities());
    }

    #[test]
    fn resolution_sampling_is_seeded_and_in_range() {
        let h = fit_resolution_hist(&[square(10.0), square(20.0), square(30.0)], 4).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_resolution(&h, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(5);
        assert_eq!(a, draw(5));
        assert!(a.iter().all(|r| (10.0..=30.0).contains(r)));
    }

    fn eval(dets: &[BBox], truths: &[BBox]) -> EvalImage {
        EvalImage {
            image_id: "i".into(),
            dims: ImageDims::new(400, 400),
            detections: dets.iter().map(|&bbox| ScoredBox { bbox, score: 1.0 }).collect(),
            truths: truths.to_vec(),
        }
    }

    #[test]
    fn exact_detections_fill_top_iou_bin() {
        let t = [square(40.0), BBox::new(300.0, 300.0, 20.0, 30.0).unwrap()];
        let h = fit_iou_hist(&[eval(&t, &t)], 0.5, 10).unwrap();
        assert_eq!(h.probabilities()[9], 1.0);
    }

    #[test]
    fn three_pair_toy() {
        let t = BBox::new(50.0, 50.0, 20.0, 20.0).unwrap();
        // shifts of 2, 4 and 12 px along x: IOU = (20 - s) / (20 + s)
        let dets: Vec<BBox> = [2.0, 4.0, 12.0].iter().map(|s| BBox::new(50.0 + s, 50.0, 20.0, 20.0).unwrap()).collect();
        let images: Vec<EvalImage> = dets.iter().map(|d| eval(&[*d], &[t])).collect();
        let h = fit_iou_hist(&images, 0.1, 10).unwrap();
        // 18/22 = 0.818, 16/24 = 0.667, 8/32 = 0.25
        let p = h.probabilities();
        assert!((p[8] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[6] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[2] - 1.0 / 3.0).abs() < 1e-15);
        // at 0.5 the 0.25 pair is unmatched
        let h = fit_iou_hist(&images, 0.5, 10).unwrap();
        assert!(h.probabilities()[..5].iter().all(|&v| v == 0.0));
        assert!(fit_iou_hist(&[eval(&[], &[t])], 0.5, 10).is_err());
    }

    fn single_bin(k: usize, bins: usize) -> IouHistogram {
        let mut probs = vec![0.0; bins];
        probs[k] = 1.0;
        Histogram { bins: probs.iter().enumerate().map(|(i, &p)| (i as f64 / bins as f64, p)).collect(), upper: 1.0 }
    }

    #[test]
    fn crop_hits_requested_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = ImageDims::new(640, 480);
        let t = BBox::new(320.0, 240.0, 80.0, 50.0).unwrap();
        assert_eq!(sample_crop(&t, dims, &single_bin(9, 10), &mut rng).unwrap(), t);
        for _ in 0..50 {
            let c = sample_crop(&t, dims, &single_bin(5, 10), &mut rng).unwrap();
            let o = iou(&c, &t);
            assert!((0.5..0.6).contains(&o), "{o}");
            assert!(c.inside(dims));
        }
    }

    #[test]
    fn unreachable_bin_exhausts_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = BBox::new(320.0, 240.0, 80.0, 50.0).unwrap();
        // the proposal family bottoms out near IOU 0.053
        let err = sample_crop(&t, ImageDims::new(640, 480), &single_bin(0, 20), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling(ref m) if m.contains("[0, 0.05)")), "{err}");
    }

    #[test]
    fn rebalance_examples() {
        let sv = ["a", "b"];
        let pr = ["x", "y", "z"];
        assert_eq!(rebalance(&sv, &pr, 1).unwrap(), vec!["a", "b", "x", "y", "z"]);
        assert_eq!(rebalance::<&str>(&[], &pr, 10).unwrap(), pr.to_vec());
        let out = rebalance(&sv, &pr, 10).unwrap();
        assert_eq!(out.iter().filter(|s| **s == "a").count(), 10);
        assert!(rebalance(&sv, &pr, 0).is_err());
        let mixed = rebalance_shuffled(&sv, &pr, 3, 2).unwrap();
        assert_eq!(mixed, rebalance_shuffled(&sv, &pr, 3, 2).unwrap());
        let mut sorted = mixed.clone();
        sorted.sort();
        let mut plain = rebalance(&sv, &pr, 3).unwrap();
        plain.sort();
        assert_eq!(sorted, plain);
    }
}
