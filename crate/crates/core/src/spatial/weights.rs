use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{haversine_m, PointPattern};

/// Floor applied to pairwise distances before inverting, in meters.
pub const DISTANCE_FLOOR_M: f64 = 1.0;

/// Largest point count for which a dense matrix is built.
pub const MAX_DENSE_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// `1 / max(d, 1 m)^2` for every pair.
    InverseSquare,
    /// `1` for pairs within the band, stored sparsely.
    Band(f64),
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inverse-sq" {
            return Ok(WeightScheme::InverseSquare);
        }
        if let Some(m) = s.strip_prefix("band:") {
            let d: f64 = m.parse().map_err(|_| Error::arg(format!("bad band distance `{m}`")))?;
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::arg("band distance must be positive"));
            }
            return Ok(WeightScheme::Band(d));
        }
        Err(Error::arg(format!("unknown weight scheme `{s}` (expected inverse-sq or band:<meters>)")))
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::InverseSquare => write!(f, "inverse-sq"),
            WeightScheme::Band(d) => write!(f, "band:{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Row-major `n x n`.
    Dense(Vec<f64>),
    /// Per-row `(column, weight)` lists sorted by column.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Pairwise weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    scheme: WeightScheme,
    row_standardized: bool,
    storage: Storage,
}

impl SpatialWeights {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Weight between `i` and `j` (0 on the diagonal).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(w) => w[i * self.n + j],
            Storage::Sparse(rows) => rows[i].binary_search_by_key(&j, |&(c, _)| c).map(|k| rows[i][k].1).unwrap_or(0.0),
        }
    }

    /// Calls `f(j, w_ij)` for every stored entry of row `i`, in column order.
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(w) => {
                for (j, &v) in w[i * self.n..(i + 1) * self.n].iter().enumerate() {
                    f(j, v);
                }
            }
            Storage::Sparse(rows) => {
                for &(j, v) in &rows[i] {
                    f(j, v);
                }
            }
        }
    }

    /// `sum_j w_ij * z_j`.
    #[inline]
    pub fn row_dot(&self, i: usize, z: &[f64]) -> f64 {
        match &self.storage {
            Storage::Dense(w) => w[i * self.n..(i + 1) * self.n].iter().zip(z).map(|(a, b)| a * b).sum(),
            Storage::Sparse(rows) => rows[i].iter().map(|&(j, v)| v * z[j]).sum(),
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let mut s = 0.0;
        self.for_each_in_row(i, |_, v| s += v);
        s
    }

    /// Sum of all weights (`S0`).
    pub fn total(&self) -> f64 {
        (0..self.n).map(|i| self.row_sum(i)).sum()
    }

    /// Number of stored non-zero entries.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(w) => w.iter().filter(|v| **v != 0.0).count(),
            Storage::Sparse(rows) => rows.iter().map(Vec::len).sum(),
        }
    }

    /// Copy with every row scaled to sum to one. Rows without neighbours stay zero.
    pub fn row_standardize(&self) -> SpatialWeights {
        let n = self.n;
        let storage = match &self.storage {
            Storage::Dense(w) => {
                let mut out = w.clone();
                out.par_chunks_mut(n).for_each(|row| {
                    let s: f64 = row.iter().sum();
                    if s > 0.0 {
                        row.iter_mut().for_each(|v| *v /= s);
                    }
                });
                Storage::Dense(out)
            }
            Storage::Sparse(rows) => Storage::Sparse(
                rows.iter()
                    .map(|row| {
                        let s: f64 = row.iter().map(|e| e.1).sum();
                        row.iter().map(|&(j, v)| (j, if s > 0.0 { v / s } else { v })).collect()
                    })
                    .collect(),
            ),
        };
        SpatialWeights { n, scheme: self.scheme, row_standardized: true, storage }
    }

    /// Copy with every weight multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> SpatialWeights {
        let storage = match &self.storage {
            Storage::Dense(w) => Storage::Dense(w.iter().map(|v| v * factor).collect()),
            Storage::Sparse(rows) => {
                Storage::Sparse(rows.iter().map(|r| r.iter().map(|&(j, v)| (j, v * factor)).collect()).collect())
            }
        };
        SpatialWeights { storage, ..self.clone() }
    }
}

/// Builds pairwise weights over the pattern's points.
///
/// Inverse-square weights are dense and limited to [`MAX_DENSE_POINTS`]
/// points. Band weights are found by a latitude sweep and stored sparsely.
pub fn build_weights(pattern: &PointPattern, scheme: WeightScheme) -> Result<SpatialWeights> {
    let n = pattern.len();
    if n < 2 {
        return Err(Error::arg("spatial weights need at least two points"));
    }
    let pts = pattern.points();
    let first = (pts[0].lat, pts[0].lon);
    if pts.iter().all(|p| (p.lat, p.lon) == first) {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let storage = match scheme {
        WeightScheme::InverseSquare => {
            if n > MAX_DENSE_POINTS {
                return Err(Error::arg(format!(
                    "{n} points exceed the dense limit of {MAX_DENSE_POINTS}; use band:<meters>"
                )));
            }
            let mut w = vec![0.0; n * n];
            w.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    if i != j {
                        let d = haversine_m(pts[i].lat, pts[i].lon, pts[j].lat, pts[j].lon).max(DISTANCE_FLOOR_M);
                        *v = 1.0 / (d * d);
                    }
                }
            });
            Storage::Dense(w)
        }
        WeightScheme::Band(band) => {
            if !(band > 0.0 && band.is_finite()) {
                return Err(Error::arg("band distance must be positive"));
            }
            // Great-circle distance is at least R * |dlat|, so a latitude window bounds the search.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| pts[a].lat.total_cmp(&pts[b].lat).then(a.cmp(&b)));
            let lat_window = (band / super::EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9);
            let rows: Vec<Vec<(usize, f64)>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let lat = pts[i].lat;
                    let start = order.partition_point(|&k| pts[k].lat < lat - lat_window);
                    let mut row: Vec<(usize, f64)> = order[start..]
                        .iter()
                        .take_while(|&&k| pts[k].lat <= lat + lat_window)
                        .filter(|&&j| j != i && haversine_m(lat, pts[i].lon, pts[j].lat, pts[j].lon) <= band)
                        .map(|&j| (j, 1.0))
                        .collect();
                    row.sort_unstable_by_key(|e| e.0);
                    row
                })
                .collect();
            if rows.iter().all(Vec::is_empty) {
                return Err(Error::DegenerateGeometry(format!("no pair of points lies within {band} m")));
            }
            Storage::Sparse(rows)
        }
    };
    Ok(SpatialWeights { n, scheme, row_standardized: false, storage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::GeoPoint;

    fn pattern(coords: &[(f64, f64)]) -> PointPattern {
        PointPattern::new(coords.iter().map(|&(lat, lon)| GeoPoint { lat, lon, value: 0.0 }).collect()).unwrap()
    }

    /// Latitude offset in degrees for a northward displacement of `m` meters.
    fn north(m: f64) -> f64 {
        (m / crate::spatial::EARTH_RADIUS_M).to_degrees()
    }

    #[test]
    fn inverse_square_at_one_kilometre() {
        let w = build_weights(&pattern(&[(0.0, 0.0), (north(1000.0), 0.0)]), WeightScheme::InverseSquare).unwrap();
        assert!((w.get(0, 1) - 1e-6).abs() < 1e-15);
        assert_eq!(w.get(0, 0), 0.0);
        assert_eq!(w.get(0, 1), w.get(1, 0));
    }

    #[test]
    fn coincident_pair_is_floored() {
        let p = pattern(&[(40.0, -75.0), (40.0, -75.0), (40.01, -75.0)]);
        let w = build_weights(&p, WeightScheme::InverseSquare).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert!(w.get(0, 2).is_finite());
    }

    #[test]
    fn band_links_neighbours_only() {
        let s = 25.0;
        let p = pattern(&[(0.0, 0.0), (north(s), 0.0), (north(2.0 * s), 0.0)]);
        let w = build_weights(&p, WeightScheme::Band(1.5 * s)).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 2), 1.0);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.nnz(), 4);
        assert!(!w.is_dense());
    }

    #[test]
    fn degenerate_inputs() {
        let same = pattern(&[(1.0, 1.0), (1.0, 1.0)]);
        assert!(matches!(build_weights(&same, WeightScheme::InverseSquare), Err(Error::DegenerateGeometry(_))));
        let far = pattern(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(matches!(build_weights(&far, WeightScheme::Band(10.0)), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn row_standardized_rows_sum_to_one() {
        let p = pattern(&[(0.0, 0.0), (0.001, 0.0), (0.0, 0.002), (0.003, 0.003)]);
        let w = build_weights(&p, WeightScheme::InverseSquare).unwrap().row_standardize();
        for i in 0..4 {
            assert!((w.row_sum(i) - 1.0).abs() < 1e-12);
        }
        assert!(w.is_row_standardized());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("inverse-sq".parse::<WeightScheme>().unwrap(), WeightScheme::InverseSquare);
        assert_eq!("band:250".parse::<WeightScheme>().unwrap(), WeightScheme::Band(250.0));
        assert!("band:-1".parse::<WeightScheme>().is_err());
        assert!("knn:4".parse::<WeightScheme>().is_err());
        assert_eq!(WeightScheme::Band(25.0).to_string(), "band:25");
    }
}
