//! Detection records, image metadata and synthetic cities.
//!
//! Detection files are line-delimited and sorted by `image_id`, which lets the
//! census rollup stream them one image at a time. See [`records`] for the line
//! format and [`tables`] for the delimited metadata files.

pub mod records;
pub mod synth;
pub mod tables;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use records::{read_detections, write_detection, DetectionReader, ImageGroups};
pub use synth::{synth_city, BoxPlacement, DetectorNoise, SyntheticCity, SyntheticCityConfig};
pub use tables::{
    read_ground_truth, read_images, read_truth_boxes, write_ground_truth, write_images, write_truth_boxes, GeoImage,
    GroundTruthRow, TruthBox,
};

/// Maximum number of (class, probability) pairs stored per detection.
pub const MAX_CLASS_PROBS: usize = 20;

/// Axis-aligned box in pixel coordinates, stored by centre and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x_center: f64, y_center: f64, width: f64, height: f64) -> Result<Self> {
        let b = BBox { x_center, y_center, width, height };
        if !(width > 0.0 && height > 0.0) || ![x_center, y_center, width, height].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        BBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn x0(&self) -> f64 {
        self.x_center - self.width / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.x_center + self.width / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.y_center - self.height / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.y_center + self.height / 2.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Geometric mean of width and height.
    pub fn resolution(&self) -> f64 {
        (self.width * self.height).sqrt()
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x_center: self.x_center * s,
            y_center: self.y_center * s,
            width: self.width * s,
            height: self.height * s,
        }
    }

    /// Intersects the box with the image rectangle. Returns `None` when nothing remains.
    pub fn clamp_to(&self, dims: ImageDims) -> Option<BBox> {
        let x0 = self.x0().max(0.0);
        let y0 = self.y0().max(0.0);
        let x1 = self.x1().min(dims.width as f64);
        let y1 = self.y1().min(dims.height as f64);
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn inside(&self, dims: ImageDims) -> bool {
        self.x0() >= 0.0 && self.y0() >= 0.0 && self.x1() <= dims.width as f64 && self.y1() <= dims.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Self {
        ImageDims { width, height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProb {
    pub class_id: u32,
    pub prob: f64,
}

/// One post-NMS detection with its (possibly calibrated) car probability and
/// truncated class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub bbox: BBox,
    pub raw_score: f64,
    pub car_probability: Option<f64>,
    pub class_probs: Vec<ClassProb>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.car_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("car probability {p} outside [0,1]")));
            }
        }
        if self.class_probs.len() > MAX_CLASS_PROBS {
            return Err(Error::Validation(format!(
                "{} class probabilities exceed the limit of {MAX_CLASS_PROBS}",
                self.class_probs.len()
            )));
        }
        let mut total = 0.0;
        for cp in &self.class_probs {
            if !(cp.prob > 0.0 && cp.prob <= 1.0) {
                return Err(Error::Validation(format!("class {} probability {} outside (0,1]", cp.class_id, cp.prob)));
            }
            total += cp.prob;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::Validation(format!("class probabilities sum to {total} > 1")));
        }
        if !self.raw_score.is_finite() {
            return Err(Error::Validation("non-finite raw score".into()));
        }
        Ok(())
    }
}
