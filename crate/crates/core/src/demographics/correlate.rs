use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::numeric::{mean, CompensatedSum};

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::arg("correlation needs at least two values"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab.add(dx * dy);
        saa.add(dx * dx);
        sbb.add(dy * dy);
    }
    let (saa, sbb) = (saa.value(), sbb.value());
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::ZeroVariance("correlation input is constant".into()));
    }
    Ok((sab.value() / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeCorrelation {
    pub name: String,
    /// `None` when the column is constant.
    pub r: Option<f64>,
    /// Two-sided p-value from the t transform of `r`.
    pub p_value: Option<f64>,
}

fn two_sided_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Correlates every feature column with `target`, returned in column order.
pub fn correlate_attributes(names: &[String], rows: &[Vec<f64>], target: &[f64]) -> Result<Vec<AttributeCorrelation>> {
    if rows.len() != target.len() {
        return Err(Error::arg(format!("{} rows but {} targets", rows.len(), target.len())));
    }
    if rows.len() < 3 {
        return Err(Error::arg("correlation needs at least three regions"));
    }
    if rows.iter().any(|r| r.len() != names.len()) {
        return Err(Error::arg("feature rows do not match the column names"));
    }
    // a constant target makes every column undefined, which is an input error
    let probe: Vec<f64> = (0..target.len()).map(|i| i as f64).collect();
    pearson_r(&probe, target)?;
    let n = rows.len();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            match pearson_r(&col, target) {
                Ok(r) => Ok(AttributeCorrelation { name: name.clone(), r: Some(r), p_value: Some(two_sided_p(r, n)) }),
                Err(Error::ZeroVariance(_)) => Ok(AttributeCorrelation { name: name.clone(), r: None, p_value: None }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Names of the `k` defined correlations with the largest `|r|`.
pub fn top_by_abs(correlations: &[AttributeCorrelation], k: usize) -> Vec<&AttributeCorrelation> {
    let mut defined: Vec<&AttributeCorrelation> = correlations.iter().filter(|c| c.r.is_some()).collect();
    defined.sort_by(|a, b| b.r.unwrap().abs().total_cmp(&a.r.unwrap().abs()));
    defined.truncate(k);
    defined
}
