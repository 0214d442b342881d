//! Visual census estimation from fine-grained car detections.
//!
//! The crate turns per-box detector output into calibrated, region-level
//! statistics about the cars on the street and relates them to income and
//! crime:
//!
//! - [`taxonomy`]: the fine-grained class table and attribute lookups.
//! - [`ingest`]: detection records, image metadata and a synthetic city generator.
//! - [`calibrate`]: location prior, score augmentation, isotonic calibration and AP.
//! - [`census`]: expected class counts per image and streaming regional rollups.
//! - [`spatial`]: Moran's I, Getis-Ord Gi* and spatial weights.
//! - [`demographics`]: feature vectors, ridge regression and correlation.
//! - [`adapt`]: resolution, crop and rebalancing samplers.
//! - [`pipeline`]: the end-to-end synthetic demonstration.
//! - [`cli`]: the command-line front end.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod calibrate;
pub mod census;
pub mod cli;
pub mod demographics;
pub mod error;
pub mod ingest;
pub mod numeric;
pub mod pipeline;
pub mod spatial;
pub mod taxonomy;

pub use error::{Error, Result};
