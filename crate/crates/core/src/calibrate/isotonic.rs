//! Isotonic score calibration by pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::calibrate::eval::{match_image, EvalImage};
use crate::error::{Error, Result};

/// Non-decreasing step function from score to probability.
///
/// Block `k` covers scores in `[breakpoints[k], breakpoints[k + 1])`; scores
/// below the first breakpoint clamp to the first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicModel {
    pub fn from_parts(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let m = IsotonicModel { breakpoints, values };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() || self.breakpoints.len() != self.values.len() {
            return Err(Error::Validation("isotonic model needs one value per breakpoint".into()));
        }
        if !self.breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("breakpoints must be strictly increasing".into()));
        }
        if !self.values.windows(2).all(|w| w[0] <= w[1]) || self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("values must be non-decreasing in [0,1]".into()));
        }
        Ok(())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn apply(&self, score: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= score);
        self.values[idx.saturating_sub(1)]
    }
}

pub fn apply_isotonic(model: &IsotonicModel, score: f64) -> f64 {
    model.apply(score)
}

/// Least-squares non-decreasing fit of label on score.
///
/// Pairs with equal scores are merged into one weighted point first, so the
/// fit is a function of the score.
pub fn fit_isotonic(pairs: &[(f64, bool)]) -> Result<IsotonicModel> {
    if pairs.is_empty() {
        return Err(Error::arg("isotonic fit needs at least one pair"));
    }
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::arg("scores must be finite"));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (first score, label sum, weight)
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for (s, y) in sorted {
        let y = y as u8 as f64;
        match points.last_mut() {
            Some(last) if last.0 == s => {
                last.1 += y;
                last.2 += 1.0;
            }
            _ => points.push((s, y, 1.0)),
        }
    }

    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        blocks.push(p);
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (prev, last) = (blocks[n - 2], blocks[n - 1]);
            // compare means without dividing: prev.sum/prev.w > last.sum/last.w
            if prev.1 * last.2 > last.1 * prev.2 {
                blocks.pop();
                let merged = blocks.last_mut().expect("two blocks");
                merged.1 += last.1;
                merged.2 += last.2;
            } else {
                break;
            }
        }
    }
    let breakpoints = blocks.iter().map(|b| b.0).collect();
    let values = blocks.iter().map(|b| (b.1 / b.2).clamp(0.0, 1.0)).collect();
    Ok(IsotonicModel { breakpoints, values })
}

/// Labels every detection 1 if it matches a truth at `iou_threshold`, else 0,
/// paired with the score produced by `score_of(image, detection)`.
pub fn calibration_pairs(
    images: &[EvalImage],
    iou_threshold: f64,
    score_of: impl Fn(usize, usize) -> f64,
) -> Vec<(f64, bool)> {
    let mut pairs = Vec::new();
    for (i, im) in images.iter().enumerate() {
        for m in match_image(im, iou_threshold) {
            pairs.push((score_of(i, m.detection), m.truth.is_some()));
        }
    }
    pairs
}
