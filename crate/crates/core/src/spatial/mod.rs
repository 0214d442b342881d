//! Spatial autocorrelation of per-point attribute values.
//!
//! Global clustering is measured with Moran's I and a permutation test; local
//! hot and cold spots come from Getis-Ord Gi* z-scores.

mod stats;
mod weights;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::tables::{read_rows, write_rows};

pub use stats::{
    classify_clusters, getis_ord_gistar, moran_expectation, morans_i, morans_i_significance, ClusterLabel, MoranTest,
    DEFAULT_COLD_THRESHOLD, DEFAULT_HOT_THRESHOLD,
};
pub use weights::{build_weights, SpatialWeights, WeightScheme, DISTANCE_FLOOR_M, MAX_DENSE_POINTS};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters between two WGS84 coordinates in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

/// Geocoded scalar values, at least two and all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<GeoPoint>,
}

impl PointPattern {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::arg("a point pattern needs at least two points"));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.lat.is_finite() && p.lon.is_finite() && p.value.is_finite()) {
                return Err(Error::Validation(format!("point {i} has a non-finite coordinate or value")));
            }
            if !(-90.0..=90.0).contains(&p.lat) || !(-180.0..=180.0).contains(&p.lon) {
                return Err(Error::Validation(format!("point {i} lies outside lat/lon bounds")));
            }
        }
        Ok(PointPattern { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Same locations with new values.
    pub fn with_values(&self, values: &[f64]) -> Result<PointPattern> {
        if values.len() != self.points.len() {
            return Err(Error::arg("value count does not match point count"));
        }
        PointPattern::new(self.points.iter().zip(values).map(|(p, &value)| GeoPoint { value, ..*p }).collect())
    }
}

/// Reads `lat,lon,value` rows.
pub fn read_point_pattern<R: Read>(source: R) -> Result<PointPattern> {
    PointPattern::new(read_rows(source)?)
}

#[derive(Debug, Clone, Serialize)]
struct ZRow {
    lat: f64,
    lon: f64,
    value: f64,
    z: Option<f64>,
    label: &'static str,
}

/// Writes `lat,lon,value,z,label` rows; undefined z-scores are left blank.
pub fn write_gistar_table<W: Write>(
    out: W,
    pattern: &PointPattern,
    z: &[Option<f64>],
    labels: &[ClusterLabel],
) -> Result<()> {
    let rows: Vec<ZRow> = pattern
        .points()
        .iter()
        .zip(z)
        .zip(labels)
        .map(|((p, &z), l)| ZRow { lat: p.lat, lon: p.lon, value: p.value, z, label: l.as_str() })
        .collect();
    write_rows(out, &rows)
}
