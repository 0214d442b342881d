//! Fixtures and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use carcensus::ingest::{synth_city, BBox, ClassProb, DetectionRecord, GeoImage, SyntheticCityConfig};
use carcensus::numeric::derive_seed;
use carcensus::spatial::{GeoPoint, PointPattern};
use carcensus::taxonomy::ClassTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid spacing in degrees for [`grid_pattern`], about 111 m at the equator.
pub const GRID_STEP_DEG: f64 = 0.001;
/// Band that links grid neighbours sharing an edge but not a corner.
pub const ROOK_BAND_M: f64 = 130.0;

pub fn grid_pattern(side: usize, mut value: impl FnMut(usize, usize) -> f64) -> PointPattern {
    let mut pts = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            pts.push(GeoPoint { lat: r as f64 * GRID_STEP_DEG, lon: c as f64 * GRID_STEP_DEG, value: value(r, c) });
        }
    }
    PointPattern::new(pts).unwrap()
}

pub fn five_point_toy() -> PointPattern {
    let coords = [(0.0, 0.0), (0.0, 0.001), (0.0005, 0.0005), (0.002, 0.0), (0.001, 0.002)];
    let values = [3.0, 7.0, 4.0, 12.0, 5.0];
    PointPattern::new(coords.iter().zip(values).map(|(&(lat, lon), value)| GeoPoint { lat, lon, value }).collect())
        .unwrap()
}

/// A calibrated record with up to `max_k` distinct classes below `classes`.
pub fn random_record(rng: &mut ChaCha8Rng, image_id: &str, classes: u32, max_k: usize) -> DetectionRecord {
    let k = rng.random_range(1..=max_k.min(classes as usize));
    let mut ids: Vec<u32> = rand::seq::index::sample(rng, classes as usize, k).into_iter().map(|i| i as u32).collect();
    ids.sort_unstable();
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let mass = rng.random_range(0.3..=1.0) / raw.iter().sum::<f64>();
    let x = rng.random_range(20.0..600.0);
    let y = rng.random_range(20.0..440.0);
    DetectionRecord {
        image_id: image_id.to_string(),
        bbox: BBox::new(x, y, rng.random_range(10.0..120.0), rng.random_range(10.0..80.0)).unwrap(),
        raw_score: rng.random_range(-2.0..2.0),
        car_probability: Some(rng.random()),
        class_probs: ids.into_iter().zip(&raw).map(|(class_id, r)| ClassProb { class_id, prob: r * mass }).collect(),
    }
}

pub struct RegionFixture {
    pub table: ClassTable,
    pub images: Vec<GeoImage>,
    pub records_per_image: usize,
    pub seed: u64,
}

/// `zips * images_per_zip` images with a fixed number of records each,
/// generated on demand from per-image seeds.
pub fn region_fixture(zips: usize, images_per_zip: usize, records_per_image: usize, seed: u64) -> RegionFixture {
    let table = synth_city(&SyntheticCityConfig { zips: 1, images_per_zip: 1, ..Default::default() }).unwrap().taxonomy;
    let mut images = Vec::with_capacity(zips * images_per_zip);
    for z in 0..zips {
        for k in 0..images_per_zip {
            images.push(GeoImage {
                image_id: format!("{:05}-{k:06}", 10_000 + z),
                lat: 41.8 + z as f64 * 0.01,
                lon: -87.7 + k as f64 * 1e-5,
                rotation: (k % 6) as u8,
                city_id: "fixture".into(),
                zip_code: format!("{}", 10_000 + z),
                width_px: 640,
                height_px: 480,
            });
        }
    }
    RegionFixture { table, images, records_per_image, seed }
}

impl RegionFixture {
    pub fn records(&self, index: usize) -> Vec<DetectionRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index as u64));
        let id = &self.images[index].image_id;
        (0..self.records_per_image).map(|_| random_record(&mut rng, id, self.table.len() as u32, 5)).collect()
    }
}

/// Image groups of a fixture in the given image order.
pub struct FixtureRecords<'a> {
    fixture: &'a RegionFixture,
    order: std::vec::IntoIter<usize>,
}

impl<'a> FixtureRecords<'a> {
    pub fn new(fixture: &'a RegionFixture, order: Vec<usize>) -> Self {
        FixtureRecords { fixture, order: order.into_iter() }
    }
}

impl Iterator for FixtureRecords<'_> {
    type Item = carcensus::Result<(String, Vec<DetectionRecord>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let i = self.order.next()?;
        Some(Ok((self.fixture.images[i].image_id.clone(), self.fixture.records(i))))
    }
}

/// Least-squares monotone fit found by trying every split into contiguous
/// blocks and keeping the best one whose block means do not decrease.
pub fn exhaustive_isotonic(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut last = f64::NEG_INFINITY;
        let mut monotone = true;
        for end in 1..=n {
            if end == n || cuts >> (end - 1) & 1 == 1 {
                let m = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                monotone &= m >= last;
                last = m;
                fit.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if !monotone {
            continue;
        }
        let sse: f64 = fit.iter().zip(y).map(|(f, v)| (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

/// Ridge problem on standardized columns, solved by accelerated gradient descent.
pub struct RidgeOracle {
    pub weights: Vec<f64>,
    gram: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    kept: Vec<usize>,
    lambda: f64,
}

impl RidgeOracle {
    /// Infinity norm of the objective gradient at `w` (full feature order).
    pub fn gradient_inf_norm(&self, w: &[f64]) -> f64 {
        let wk: Vec<f64> = self.kept.iter().map(|&j| w[j]).collect();
        gradient(&self.gram, &self.rhs, self.lambda, &wk).iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn gradient(gram: &[Vec<f64>], rhs: &[f64], lambda: f64, w: &[f64]) -> Vec<f64> {
    (0..w.len())
        .map(|a| 2.0 * (gram[a].iter().zip(w).map(|(g, v)| g * v).sum::<f64>() - rhs[a] + lambda * w[a]))
        .collect()
}

pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> RidgeOracle {
    let n = x.len();
    let d = x[0].len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut cols = Vec::new();
    let mut kept = Vec::new();
    for j in 0..d {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 {
            cols.push(x.iter().map(|r| (r[j] - m) / sd).collect::<Vec<f64>>());
            kept.push(j);
        }
    }
    let p = cols.len();
    let gram: Vec<Vec<f64>> =
        (0..p).map(|a| (0..p).map(|b| cols[a].iter().zip(&cols[b]).map(|(u, v)| u * v).sum()).collect()).collect();
    let rhs: Vec<f64> = (0..p).map(|a| cols[a].iter().zip(y).map(|(u, v)| u * (v - y_mean)).sum()).collect();
    // Gershgorin bound on the Hessian's largest eigenvalue
    let lip = 2.0 * (gram.iter().map(|row| row.iter().map(|g| g.abs()).sum::<f64>()).fold(0.0, f64::max) + lambda);
    let mu = 2.0 * lambda;
    let momentum = ((lip / mu).sqrt() - 1.0) / ((lip / mu).sqrt() + 1.0);
    let (mut w, mut prev) = (vec![0.0; p], vec![0.0; p]);
    for _ in 0..500_000 {
        let look: Vec<f64> = w.iter().zip(&prev).map(|(a, b)| a + momentum * (a - b)).collect();
        let g = gradient(&gram, &rhs, lambda, &look);
        prev = std::mem::replace(&mut w, look.iter().zip(&g).map(|(v, g)| v - g / lip).collect());
        let gw = gradient(&gram, &rhs, lambda, &w);
        if gw.iter().all(|g| g.abs() < 1e-11) {
            break;
        }
    }
    let mut weights = vec![0.0; d];
    for (k, &j) in kept.iter().enumerate() {
        weights[j] = w[k];
    }
    RidgeOracle { weights, gram, rhs, kept, lambda }
}

/// Largest absolute gap between observed bin frequencies and probabilities.
pub fn max_frequency_gap(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts.iter().zip(probs).map(|(&c, p)| (c as f64 / total as f64 - p).abs()).fold(0.0, f64::max)
}
