//! Box overlap and detection average precision.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BBox, ImageDims};

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub image_id: String,
    pub dims: ImageDims,
    pub detections: Vec<ScoredBox>,
    pub truths: Vec<BBox>,
}

/// Outcome of greedy matching for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMatch {
    /// Index into the image's `detections`.
    pub detection: usize,
    pub score: f64,
    /// Matched truth index and overlap, when the detection is a true positive.
    pub truth: Option<(usize, f64)>,
}

/// Greedy matching: detections in descending score order each claim the
/// unmatched truth with the highest IoU, provided it reaches `threshold`.
/// Output is in that descending-score order.
pub fn match_image(image: &EvalImage, threshold: f64) -> Vec<DetectionMatch> {
    match_with_scores(image, threshold, |i| image.detections[i].score)
}

pub(crate) fn match_with_scores(
    image: &EvalImage,
    threshold: f64,
    score_of: impl Fn(usize) -> f64,
) -> Vec<DetectionMatch> {
    let scores: Vec<f64> = (0..image.detections.len()).map(score_of).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taken = vec![false; image.truths.len()];
    order
        .into_iter()
        .map(|d| {
            let det = &image.detections[d].bbox;
            let best =
                image.truths.iter().enumerate().filter(|(t, _)| !taken[*t]).map(|(t, tb)| (t, iou(det, tb))).fold(
                    None,
                    |acc: Option<(usize, f64)>, cur| match acc {
                        Some(a) if a.1 >= cur.1 => Some(a),
                        _ => Some(cur),
                    },
                );
            let truth = best.filter(|&(_, o)| o >= threshold);
            if let Some((t, _)) = truth {
                taken[t] = true;
            }
            DetectionMatch { detection: d, score: scores[d], truth }
        })
        .collect()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!("IOU threshold {threshold} not in (0,1)")));
    }
    Ok(())
}

/// All-points interpolated average precision over a set of images.
pub fn average_precision(images: &[EvalImage], iou_threshold: f64) -> Result<f64> {
    ap_with_scores(images, iou_threshold, |i, d| images[i].detections[d].score)
}

pub(crate) fn ap_with_scores(
    images: &[EvalImage],
    iou_threshold: f64,
    score_of: impl Fn(usize, usize) -> f64 + Sync,
) -> Result<f64> {
    check_threshold(iou_threshold)?;
    let total_truths: usize = images.iter().map(|im| im.truths.len()).sum();
    if total_truths == 0 {
        return Err(Error::UndefinedAp);
    }
    // Per-image match lists, concatenated in input order before the sweep.
    let per_image: Vec<Vec<(f64, bool)>> = images
        .par_iter()
        .enumerate()
        .map(|(i, im)| {
            match_with_scores(im, iou_threshold, |d| score_of(i, d))
                .into_iter()
                .map(|m| (m.score, m.truth.is_some()))
                .collect()
        })
        .collect();
    let mut ranked: Vec<(f64, bool)> = per_image.into_iter().flatten().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(ap_from_ranked(&ranked, total_truths))
}

/// Area under the precision/recall curve using the monotone precision envelope.
pub fn ap_from_ranked(ranked: &[(f64, bool)], total_truths: usize) -> f64 {
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / total_truths as f64, tp as f64 / (k + 1) as f64));
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let unit = b(0.5, 0.5, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        // half-width offset: intersection 0.5, union 1.5
        let shifted = b(1.0, 0.5, 1.0, 1.0);
        assert!((iou(&unit, &shifted) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn image(dets: &[(BBox, f64)], truths: &[BBox]) -> EvalImage {
        EvalImage {
            image_id: "i".into(),
            dims: ImageDims::new(100, 100),
            detections: dets.iter().map(|&(bbox, score)| ScoredBox { bbox, score }).collect(),
            truths: truths.to_vec(),
        }
    }

    #[test]
    fn perfect_and_hopeless_detectors() {
        let t1 = b(10.0, 10.0, 8.0, 8.0);
        let t2 = b(50.0, 50.0, 8.0, 8.0);
        let perfect = image(&[(t1, 0.9), (t2, 0.8), (b(90.0, 90.0, 4.0, 4.0), 0.1)], &[t1, t2]);
        assert_eq!(average_precision(&[perfect], 0.5).unwrap(), 1.0);
        let hopeless = image(&[(b(90.0, 90.0, 4.0, 4.0), 0.9)], &[t1, t2]);
        assert_eq!(average_precision(&[hopeless], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn three_detections_two_truths() {
        // ranks: TP, FP, TP -> PR points (1/2, 1), (1/2, 1/2), (1, 2/3)
        // envelope precision: 1 for recall 1/2, 2/3 for recall 1 -> AP = 1/2 + 1/3
        let t1 = b(10.0, 10.0, 8.0, 8.0);
        let t2 = b(50.0, 50.0, 8.0, 8.0);
        let im = image(&[(t1, 0.9), (b(80.0, 20.0, 6.0, 6.0), 0.8), (t2, 0.7)], &[t1, t2]);
        let ap = average_precision(&[im], 0.5).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "{ap}");
    }

    #[test]
    fn truth_matched_once() {
        let t = b(10.0, 10.0, 8.0, 8.0);
        let im = image(&[(t, 0.9), (t, 0.8)], &[t]);
        let m = match_image(&im, 0.5);
        assert!(m[0].truth.is_some());
        assert!(m[1].truth.is_none());
    }

    #[test]
    fn no_truths_is_undefined() {
        let im = image(&[(b(1.0, 1.0, 1.0, 1.0), 0.5)], &[]);
        assert!(matches!(average_precision(&[im], 0.5), Err(Error::UndefinedAp)));
        assert!(average_precision(&[], 1.0).is_err());
    }
}
