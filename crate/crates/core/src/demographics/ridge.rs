use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, population_variance};

/// Ridge regression on standardized features with an unpenalized intercept.
///
/// `weights` are on the standardized scale; columns with zero training
/// variance keep weight 0 and are listed in `dropped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub dropped: Vec<usize>,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::arg(format!("{} names for {} features", names.len(), self.dim())));
        }
        self.feature_names = names;
        Ok(self)
    }

    fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = if self.scales[j] > 0.0 { (x[j] - self.means[j]) / self.scales[j] } else { 0.0 };
        }
    }

    pub fn standardized_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::arg(format!("feature vector has {} values, model expects {}", x.len(), self.dim())));
        }
        let mut z = vec![0.0; x.len()];
        self.standardize_into(x, &mut z);
        Ok(self.intercept + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        let d = self.weights.len();
        if self.means.len() != d || self.scales.len() != d {
            return Err(Error::Validation("model vectors differ in length".into()));
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != d {
            return Err(Error::Validation("model feature names do not match its dimension".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation("model lambda is negative".into()));
        }
        Ok(())
    }
}

pub fn predict(model: &RidgeModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::arg("ridge regression needs at least two rows"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::arg("feature rows differ in length"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::arg("features and targets must be finite"));
    }
    Ok(d)
}

/// Fits ridge weights by solving `(Z'Z + lambda I) w = Z'(y - mean(y))`.
///
/// `Z` holds the standardized kept columns. The solve uses a Cholesky
/// factorization with one step of iterative refinement, falling back to an
/// SVD when the system is singular (lambda = 0 with collinear columns).
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let d = check_design(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be a finite non-negative number, got {lambda}")));
    }
    let n = x.len();
    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    let mut kept = Vec::with_capacity(d);
    let mut dropped = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        means[j] = mean(&col);
        let sd = population_variance(&col).sqrt();
        let magnitude = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sd > 1e-12 * magnitude.max(f64::MIN_POSITIVE) {
            scales[j] = sd;
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    if !dropped.is_empty() {
        log::debug!("dropping {} zero-variance feature columns", dropped.len());
    }
    let intercept = mean(y);
    let mut weights = vec![0.0; d];
    if !kept.is_empty() {
        let z = DMatrix::from_fn(n, kept.len(), |i, k| {
            let j = kept[k];
            (x[i][j] - means[j]) / scales[j]
        });
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - intercept));
        let w = solve_normal(&z, &yc, lambda)?;
        for (k, &j) in kept.iter().enumerate() {
            weights[j] = w[k];
        }
    }
    Ok(RidgeModel { feature_names: Vec::new(), means, scales, weights, intercept, lambda, dropped })
}

fn solve_normal(z: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let p = z.ncols();
    let a = z.transpose() * z + DMatrix::<f64>::identity(p, p) * lambda;
    let b = z.transpose() * yc;
    if let Some(chol) = a.clone().cholesky() {
        let mut w = chol.solve(&b);
        let r = &b - &a * &w;
        w += chol.solve(&r);
        if w.iter().all(|v| v.is_finite()) {
            return Ok(w);
        }
    }
    let w = a.svd(true, true).solve(&b, 1e-12).map_err(|e| Error::Numeric(format!("SVD solve failed: {e}")))?;
    Ok(w)
}

/// Default grid: `0` then `10^k` for `k` in `-3..=4`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((-3..=4).map(|k| 10f64.powi(k))).collect()
}

/// Chooses lambda by `folds`-fold cross-validated RMSE.
///
/// Fold membership comes from a seeded shuffle. Ties (within 1e-12 relative)
/// go to the larger lambda.
pub fn select_lambda(x: &[Vec<f64>], y: &[f64], grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    check_design(x, y)?;
    if grid.is_empty() {
        return Err(Error::arg("lambda grid is empty"));
    }
    if folds < 2 {
        return Err(Error::arg("need at least two folds"));
    }
    let n = x.len();
    if n < folds || n < 3 {
        return Err(Error::arg(format!("{n} rows cannot fill {folds} folds")));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::arg(format!("lambda grid contains {bad}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let rmse: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (mut xt, mut yt, mut xv, mut yv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..n {
                if fold_of[i] == f {
                    xv.push(&x[i]);
                    yv.push(y[i]);
                } else {
                    xt.push(x[i].clone());
                    yt.push(y[i]);
                }
            }
            let m = fit_ridge(&xt, &yt, grid[g])?;
            let mut se = 0.0;
            for (xi, yi) in xv.iter().zip(&yv) {
                se += (m.predict(xi)? - yi).powi(2);
            }
            Ok((se / yv.len() as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, f64)> = None;
    for (g, &lambda) in grid.iter().enumerate() {
        let score = rmse[g * folds..(g + 1) * folds].iter().sum::<f64>() / folds as f64;
        best = match best {
            None => Some((lambda, score)),
            Some((bl, bs)) => {
                let tie = (score - bs).abs() <= 1e-12 * bs.abs().max(score.abs());
                if score < bs && !tie || tie && lambda > bl {
                    Some((lambda, score))
                } else {
                    Some((bl, bs))
                }
            }
        };
    }
    Ok(best.expect("non-empty grid").0)
}
