//! Detector score calibration.
//!
//! Raw detector scores are first augmented with a weighted log location prior
//! and then mapped to car probabilities with an isotonic step function fit on
//! validation detections matched to ground truth.

pub mod eval;
pub mod isotonic;
pub mod prior;

pub use eval::{average_precision, iou, match_image, DetectionMatch, EvalImage, ScoredBox};
pub use isotonic::{apply_isotonic, calibration_pairs, fit_isotonic, IsotonicModel};
pub use prior::{
    augment_score, default_alpha_grid, fit_location_prior, learn_alpha, prior_log_prob, AlphaFit, LocationPrior,
    DEFAULT_BINS_PER_AXIS,
};

/// IOU at which a detection counts as matching a ground-truth box.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;
