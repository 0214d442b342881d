use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, mean, CompensatedSum};
use crate::spatial::{PointPattern, SpatialWeights};

pub const DEFAULT_HOT_THRESHOLD: f64 = 1.96;
pub const DEFAULT_COLD_THRESHOLD: f64 = -1.96;

/// Expected value of Moran's I under spatial randomness, `-1 / (N - 1)`.
pub fn moran_expectation(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

fn check_sizes(pattern: &PointPattern, weights: &SpatialWeights) -> Result<()> {
    if pattern.len() != weights.len() {
        return Err(Error::arg(format!("{} points but weights cover {}", pattern.len(), weights.len())));
    }
    Ok(())
}

/// Deviations from the mean and their sum of squares.
fn deviations(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = mean(values);
    let z: Vec<f64> = values.iter().map(|x| x - m).collect();
    let ss = z.iter().map(|d| d * d).collect::<CompensatedSum>().value();
    let scale = values.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if ss <= (scale * 1e-12).powi(2) * values.len() as f64 {
        return Err(Error::ZeroVariance("values are constant".into()));
    }
    Ok((z, ss))
}

/// `sum_ij w_ij z_i z_j`, reduced over rows in index order.
fn cross_product(weights: &SpatialWeights, z: &[f64]) -> f64 {
    let rows: Vec<f64> = (0..z.len()).into_par_iter().map(|i| z[i] * weights.row_dot(i, z)).collect();
    rows.into_iter().collect::<CompensatedSum>().value()
}

fn moran_from(weights: &SpatialWeights, s0: f64, z: &[f64], ss: f64) -> f64 {
    z.len() as f64 * cross_product(weights, z) / (s0 * ss)
}

/// Global Moran's I with the weights exactly as given.
pub fn morans_i(pattern: &PointPattern, weights: &SpatialWeights) -> Result<f64> {
    check_sizes(pattern, weights)?;
    let (z, ss) = deviations(&pattern.values())?;
    let s0 = weights.total();
    if s0 <= 0.0 {
        return Err(Error::DegenerateGeometry("weights are all zero".into()));
    }
    Ok(moran_from(weights, s0, &z, ss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoranTest {
    pub observed: f64,
    pub expected: f64,
    pub p_value: f64,
    pub permutations: usize,
    /// Permutations whose `|I|` reached the observed `|I|`.
    pub extreme: usize,
}

/// Two-sided permutation test of Moran's I.
///
/// Permutation `k` shuffles the values with a generator seeded from
/// `derive_seed(seed, k)`, so results do not depend on the thread count.
pub fn morans_i_significance(
    pattern: &PointPattern,
    weights: &SpatialWeights,
    permutations: usize,
    seed: u64,
) -> Result<MoranTest> {
    if permutations < 99 {
        return Err(Error::arg("at least 99 permutations are required"));
    }
    check_sizes(pattern, weights)?;
    let (z, ss) = deviations(&pattern.values())?;
    let s0 = weights.total();
    if s0 <= 0.0 {
        return Err(Error::DegenerateGeometry("weights are all zero".into()));
    }
    let observed = moran_from(weights, s0, &z, ss);
    // Ties within rounding noise count as extreme.
    let bar = observed.abs() - 1e-10 * observed.abs().max(1.0);
    let n = z.len() as f64;
    let extreme = (0..permutations)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let mut shuffled = z.clone();
            shuffled.shuffle(&mut rng);
            let i_perm = n * shuffled.iter().enumerate().map(|(i, zi)| zi * weights.row_dot(i, &shuffled)).sum::<f64>()
                / (s0 * ss);
            i_perm.abs() >= bar
        })
        .count();
    Ok(MoranTest {
        observed,
        expected: moran_expectation(z.len()),
        p_value: (1 + extreme) as f64 / (1 + permutations) as f64,
        permutations,
        extreme,
    })
}

/// Gi* z-score per point, with each point included in its own neighbourhood
/// at weight 1. Points whose variance term vanishes are `None`.
pub fn getis_ord_gistar(pattern: &PointPattern, weights: &SpatialWeights) -> Result<Vec<Option<f64>>> {
    check_sizes(pattern, weights)?;
    let x = pattern.values();
    let n = x.len() as f64;
    let x_bar = mean(&x);
    let s = x.iter().map(|v| (v - x_bar).powi(2)).collect::<CompensatedSum>().value() / n;
    let s = s.sqrt();
    if !(s > 0.0) {
        return Ok(vec![None; x.len()]);
    }
    Ok((0..x.len())
        .into_par_iter()
        .map(|i| {
            let (mut wx, mut w1, mut w2) = (x[i], 1.0, 1.0);
            weights.for_each_in_row(i, |j, w| {
                if j != i {
                    wx += w * x[j];
                    w1 += w;
                    w2 += w * w;
                }
            });
            let spread = n * w2 - w1 * w1;
            if spread <= 1e-12 * n * w2 {
                return None;
            }
            Some((wx - x_bar * w1) / (s * (spread / (n - 1.0)).sqrt()))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ClusterLabel {
    Hot,
    Cold,
    None,
}

impl ClusterLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterLabel::Hot => "hot",
            ClusterLabel::Cold => "cold",
            ClusterLabel::None => "none",
        }
    }
}

/// Labels `z >= hot` hot, `z <= cold` cold and everything else, including
/// undefined scores, none.
pub fn classify_clusters(z: &[Option<f64>], hot: f64, cold: f64) -> Result<Vec<ClusterLabel>> {
    if !(hot > 0.0 && cold < 0.0) {
        return Err(Error::arg("thresholds must satisfy hot > 0 > cold"));
    }
    Ok(z.iter()
        .map(|z| match z {
            Some(v) if *v >= hot => ClusterLabel::Hot,
            Some(v) if *v <= cold => ClusterLabel::Cold,
            _ => ClusterLabel::None,
        })
        .collect())
}
