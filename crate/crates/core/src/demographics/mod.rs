//! Car-feature vectors per region and regression onto demographic targets.

mod correlate;
mod ridge;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::census::RegionStats;
use crate::error::{Error, Result};
use crate::ingest::GroundTruthRow;
use crate::taxonomy::{BodyType, COMMON_MAKES};

pub use correlate::{correlate_attributes, pearson_r, top_by_abs, AttributeCorrelation};
pub use ridge::{default_lambda_grid, fit_ridge, predict, select_lambda, RidgeModel};

/// Share of regions used for training in the default split.
pub const TRAIN_FRACTION: f64 = 0.18;

/// Name of the pooled slot for makes outside the schema.
pub const OTHER_MAKE: &str = "make:other";

const AGGREGATES: [&str; 4] = ["avg_mpg", "avg_price", "cars_per_image", "pct_foreign"];

/// Ordered feature layout: four aggregates, one share per body type, one per
/// configured make and a pooled share for every other make.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub makes: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema { makes: COMMON_MAKES.iter().map(|m| m.name.to_string()).collect() }
    }
}

impl FeatureSchema {
    pub fn new(makes: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for m in &makes {
            if !seen.insert(m.as_str()) {
                return Err(Error::Config(format!("make `{m}` listed twice in feature schema")));
            }
        }
        Ok(FeatureSchema { makes })
    }

    pub fn dim(&self) -> usize {
        AGGREGATES.len() + BodyType::ALL.len() + self.makes.len() + 1
    }

    pub fn descriptors(&self) -> Vec<String> {
        let mut out: Vec<String> = AGGREGATES.iter().map(|s| s.to_string()).collect();
        out.extend(BodyType::ALL.iter().map(|b| format!("body:{}", b.label())));
        out.extend(self.makes.iter().map(|m| format!("make:{m}")));
        out.push(OTHER_MAKE.to_string());
        out
    }

    pub fn index_of(&self, descriptor: &str) -> Option<usize> {
        self.descriptors().iter().position(|d| d == descriptor)
    }
}

/// Feature vector for one region under `schema`.
pub fn build_features(stats: &RegionStats, schema: &FeatureSchema) -> Result<Vec<f64>> {
    if !(stats.total_expected_cars > 0.0 && stats.class_mass > 0.0) {
        return Err(Error::EmptyRegion(stats.region.clone()));
    }
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::Validation(format!("region `{}` has no known {name}", stats.region)))
    };
    let mut x = Vec::with_capacity(schema.dim());
    x.push(need(stats.avg_mpg, "mpg")?);
    x.push(need(stats.avg_price, "price")?);
    x.push(stats.cars_per_image);
    x.push(need(stats.pct_foreign, "country")?);
    x.extend(BodyType::ALL.iter().map(|b| stats.body_share(*b)));
    let mut listed = 0.0;
    for m in &schema.makes {
        let s = stats.make_share(m);
        listed += s;
        x.push(s);
    }
    let all: f64 = stats.pct_by_make.values().sum();
    x.push((all - listed).max(0.0));
    Ok(x)
}

/// Region feature rows with the image counts used for city weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub regions: Vec<String>,
    pub image_counts: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    /// Builds rows for every region, skipping (and logging) regions without cars.
    pub fn from_regions(regions: &[RegionStats], schema: &FeatureSchema) -> Result<Self> {
        let mut t = FeatureTable {
            names: schema.descriptors(),
            regions: Vec::new(),
            image_counts: Vec::new(),
            rows: Vec::new(),
        };
        for r in regions {
            match build_features(r, schema) {
                Ok(x) => {
                    t.regions.push(r.region.clone());
                    t.image_counts.push(r.image_count);
                    t.rows.push(x);
                }
                Err(Error::EmptyRegion(id)) => log::warn!("skipping region `{id}` with no expected cars"),
                Err(e) => return Err(e),
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            regions: idx.iter().map(|&i| self.regions[i].clone()).collect(),
            image_counts: idx.iter().map(|&i| self.image_counts[i]).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["region".to_string(), "image_count".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for ((region, count), row) in self.regions.iter().zip(&self.image_counts).zip(&self.rows) {
            let mut rec = vec![region.clone(), count.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("region") {
            return Err(Error::Schema("region".into()));
        }
        if headers.get(1) != Some("image_count") {
            return Err(Error::Schema("image_count".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut t = FeatureTable { names, regions: Vec::new(), image_counts: Vec::new(), rows: Vec::new() };
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            let bad = |s: &str| Error::Parse { line, message: format!("bad number `{s}`") };
            t.regions.push(rec.get(0).unwrap_or("").to_string());
            let count = rec.get(1).unwrap_or("");
            t.image_counts.push(count.parse().map_err(|_| bad(count))?);
            let row = rec.iter().skip(2).map(|s| s.parse::<f64>().map_err(|_| bad(s))).collect::<Result<Vec<_>>>()?;
            t.rows.push(row);
        }
        Ok(t)
    }
}

/// Ground-truth column to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Income,
    Burglary,
    TotalCrime,
}

impl Target {
    pub fn value(self, row: &GroundTruthRow) -> Option<f64> {
        match self {
            Target::Income => Some(row.median_income),
            Target::Burglary => row.burglary_rate,
            Target::TotalCrime => row.total_crime_rate,
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "income" => Ok(Target::Income),
            "burglary" => Ok(Target::Burglary),
            "crime" => Ok(Target::TotalCrime),
            other => Err(Error::arg(format!("unknown target `{other}` (expected income|burglary|crime)"))),
        }
    }
}

/// Rows of `table` with a known target value, as `(row index, target)`.
pub fn join_target(table: &FeatureTable, truth: &[GroundTruthRow], target: Target) -> Vec<(usize, f64)> {
    let by_region: HashMap<&str, &GroundTruthRow> = truth.iter().map(|r| (r.region.as_str(), r)).collect();
    table
        .regions
        .iter()
        .enumerate()
        .filter_map(|(i, r)| by_region.get(r.as_str()).and_then(|g| target.value(g)).map(|y| (i, y)))
        .collect()
}

/// Seeded split of `0..n` into train and test indices.
///
/// The training side holds `round(fraction * n)` indices, at least two and
/// leaving at least one for testing. Both sides come back sorted.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(Error::arg("need at least three regions to split"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg("train fraction must lie in (0,1)"));
    }
    let k = ((fraction * n as f64).round() as usize).clamp(2, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Image-count weighted mean of feature rows.
pub fn weighted_mean_features(rows: &[&[f64]], weights: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = weights.iter().sum();
    if rows.is_empty() || total == 0 {
        return Err(Error::arg("weighted mean needs rows with positive weight"));
    }
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for (r, &w) in rows.iter().zip(weights) {
        if r.len() != d {
            return Err(Error::arg("feature rows differ in length"));
        }
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += w as f64 * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= total as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn stats(makes: &[(&str, f64)], bodies: &[(BodyType, f64)], foreign: f64) -> RegionStats {
        RegionStats {
            region: "z".into(),
            image_count: 10,
            total_expected_cars: 5.0,
            class_counts: BTreeMap::new(),
            class_mass: 4.0,
            avg_price: Some(21_500.0),
            avg_mpg: Some(27.0),
            pct_foreign: Some(foreign),
            pct_by_make: makes.iter().map(|&(m, p)| (m.to_string(), p)).collect(),
            pct_by_body_type: bodies.iter().copied().collect(),
            cars_per_image: 0.5,
        }
    }

    #[test]
    fn default_schema_has_88_slots() {
        let s = FeatureSchema::default();
        assert_eq!(s.dim(), 88);
        assert_eq!(s.descriptors().len(), 88);
        assert_eq!(s.index_of("avg_price"), Some(1));
        assert_eq!(s.index_of(OTHER_MAKE), Some(87));
    }

    #[test]
    fn foreign_sedans_only() {
        let s = FeatureSchema::default();
        let x = build_features(&stats(&[("Honda", 1.0)], &[(BodyType::Sedan, 1.0)], 1.0), &s).unwrap();
        assert_eq!(x[3], 1.0);
        let sedan = s.index_of("body:sedan").unwrap();
        assert_eq!(x[sedan], 1.0);
        assert_eq!(x[4..16].iter().sum::<f64>(), 1.0);
        assert_eq!(x[1], 21_500.0);
    }

    #[test]
    fn two_make_split_and_other_pool() {
        let s = FeatureSchema::new(vec!["Honda".into()]).unwrap();
        let x = build_features(&stats(&[("Honda", 0.6), ("Trabant", 0.4)], &[], 1.0), &s).unwrap();
        assert_eq!(x[s.index_of("make:Honda").unwrap()], 0.6);
        assert!((x[s.index_of(OTHER_MAKE).unwrap()] - 0.4).abs() < 1e-15);
        assert!(FeatureSchema::new(vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn empty_region_rejected() {
        let mut r = stats(&[], &[], 0.0);
        r.total_expected_cars = 0.0;
        assert!(matches!(build_features(&r, &FeatureSchema::default()), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = train_test_split(100, TRAIN_FRACTION, 4).unwrap();
        assert_eq!(train.len(), 18);
        assert_eq!(test.len(), 82);
        assert_eq!(train_test_split(100, TRAIN_FRACTION, 4).unwrap().0, train);
        assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn feature_table_round_trip() {
        let s = FeatureSchema::new(vec!["Honda".into()]).unwrap();
        let t = FeatureTable::from_regions(&[stats(&[("Honda", 1.0)], &[(BodyType::Coupe, 1.0)], 1.0)], &s).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn weighted_city_mean() {
        let a = [1.0, 10.0];
        let b = [3.0, 20.0];
        let m = weighted_mean_features(&[&a, &b], &[1, 3]).unwrap();
        assert_eq!(m, vec![2.5, 17.5]);
    }
}
