//! End-to-end runs over joined detection, image and truth tables.
//!
//! [`demo`] generates a synthetic city and carries it through calibration,
//! regional rollup, spatial statistics and income regression. The helpers it
//! uses are public so other drivers can recombine the stages.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calibrate::{
    calibration_pairs, default_alpha_grid, fit_isotonic, fit_location_prior, learn_alpha, AlphaFit, EvalImage,
    IsotonicModel, LocationPrior, ScoredBox, DEFAULT_BINS_PER_AXIS, DEFAULT_MATCH_IOU,
};
use crate::census::{Aggregator, Grouping, RegionRollup, RegionStats};
use crate::demographics::{
    correlate_attributes, default_lambda_grid, fit_ridge, join_target, pearson_r, select_lambda, top_by_abs,
    train_test_split, AttributeCorrelation, FeatureSchema, FeatureTable, Target, TRAIN_FRACTION,
};
use crate::error::{Error, Result};
use crate::ingest::{synth_city, DetectionRecord, GeoImage, ImageDims, SyntheticCityConfig, TruthBox};
use crate::numeric::derive_seed;
use crate::spatial::{build_weights, morans_i, morans_i_significance, GeoPoint, MoranTest, PointPattern, WeightScheme};
use crate::taxonomy::ClassTable;

/// Joins detections and truth boxes onto image metadata, in image order.
///
/// Detection scores are taken from `raw_score`.
pub fn eval_images(images: &[GeoImage], detections: &[DetectionRecord], truths: &[TruthBox]) -> Vec<EvalImage> {
    let index: HashMap<&str, usize> = images.iter().enumerate().map(|(i, im)| (im.image_id.as_str(), i)).collect();
    let mut out: Vec<EvalImage> = images
        .iter()
        .map(|im| EvalImage {
            image_id: im.image_id.clone(),
            dims: im.dims(),
            detections: Vec::new(),
            truths: Vec::new(),
        })
        .collect();
    for d in detections {
        if let Some(&i) = index.get(d.image_id.as_str()) {
            out[i].detections.push(ScoredBox { bbox: d.bbox, score: d.raw_score });
        }
    }
    for t in truths {
        if let Some(&i) = index.get(t.image_id.as_str()) {
            out[i].truths.push(t.bbox());
        }
    }
    out
}

/// Fitted score calibration: location prior with its learned alpha, and the
/// isotonic map from augmented score to car probability.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub prior: LocationPrior,
    pub alpha_fit: AlphaFit,
    pub isotonic: IsotonicModel,
}

impl Calibration {
    /// Fits the prior on `prior_set` truths, then alpha and the isotonic map on `validation`.
    pub fn fit(prior_set: &[EvalImage], validation: &[EvalImage], iou_threshold: f64) -> Result<Calibration> {
        let boxes: Vec<(crate::ingest::BBox, ImageDims)> =
            prior_set.iter().flat_map(|im| im.truths.iter().map(move |t| (*t, im.dims))).collect();
        let prior = fit_location_prior(&boxes, DEFAULT_BINS_PER_AXIS)?;
        let alpha_fit = learn_alpha(&prior, validation, iou_threshold, &default_alpha_grid())?;
        let prior = prior.with_alpha(alpha_fit.alpha);
        let pairs = calibration_pairs(validation, iou_threshold, |i, d| {
            let det = &validation[i].detections[d];
            prior.augment_score(det.score, &det.bbox, validation[i].dims)
        });
        let isotonic = fit_isotonic(&pairs)?;
        Ok(Calibration { prior, alpha_fit, isotonic })
    }

    pub fn car_probability(&self, raw_score: f64, bbox: &crate::ingest::BBox, dims: ImageDims) -> f64 {
        self.isotonic.apply(self.prior.augment_score(raw_score, bbox, dims))
    }

    /// Fills `car_probability` on every record whose image is known.
    pub fn apply(&self, records: &mut [DetectionRecord], dims_of: &HashMap<&str, ImageDims>) -> Result<()> {
        for r in records {
            let dims = dims_of
                .get(r.image_id.as_str())
                .ok_or_else(|| Error::Validation(format!("image `{}` has no metadata", r.image_id)))?;
            r.car_probability = Some(self.car_probability(r.raw_score, &r.bbox, *dims));
        }
        Ok(())
    }
}

/// Rolls detections up by `grouping`. Records must be grouped by image.
pub fn rollup(
    table: &ClassTable,
    images: &[GeoImage],
    detections: &[DetectionRecord],
    grouping: Grouping,
) -> Result<RegionRollup> {
    let mut agg = Aggregator::new(table, images, grouping);
    let groups = detections.chunk_by(|a, b| a.image_id == b.image_id).map(|g| Ok((g[0].image_id.clone(), g.to_vec())));
    agg.consume(groups, 4096)?;
    agg.finish()
}

/// Per-point pattern of `value` over point-grouped regions, skipping regions without one.
pub fn point_pattern(points: &[RegionStats], value: impl Fn(&RegionStats) -> Option<f64>) -> Result<PointPattern> {
    let mut out = Vec::with_capacity(points.len());
    for r in points {
        let (lat, lon) =
            r.region.split_once(':').ok_or_else(|| Error::arg(format!("region `{}` is not a point key", r.region)))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::arg(format!("bad coordinate `{s}`")));
        if let Some(v) = value(r) {
            out.push(GeoPoint { lat: parse(lat)?, lon: parse(lon)?, value: v });
        }
    }
    PointPattern::new(out)
}

/// Settings for [`demo`].
#[derive(Debug, Clone, Serialize)]
pub struct DemoConfig {
    pub city: SyntheticCityConfig,
    /// Share of images held out for fitting the calibration.
    pub calibration_fraction: f64,
    pub moran_permutations: usize,
    pub moran_shuffles: usize,
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl DemoConfig {
    pub fn new(seed: u64) -> Self {
        DemoConfig {
            city: SyntheticCityConfig { seed, ..SyntheticCityConfig::default() },
            calibration_fraction: 0.2,
            moran_permutations: 999,
            moran_shuffles: 100,
            folds: 5,
            lambda_grid: default_lambda_grid(),
            train_fraction: TRAIN_FRACTION,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub zips: usize,
    pub images: usize,
    pub detections: usize,
    pub alpha: f64,
    pub ap_raw: f64,
    pub ap_augmented: f64,
    pub moran: MoranTest,
    /// Shuffles of the point values whose Moran's I fell below the observed one.
    pub moran_shuffle_wins: usize,
    pub moran_shuffles: usize,
    pub lambda: f64,
    pub train_regions: usize,
    pub test_regions: usize,
    /// Held-out correlation between predicted and true median income.
    pub income_r: f64,
    pub correlations: Vec<AttributeCorrelation>,
    pub top_features: Vec<String>,
    pub seconds: f64,
}

impl fmt::Display for DemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "zips={} images={} detections={}", self.zips, self.images, self.detections)?;
        writeln!(f, "alpha={} ap_raw={:.4} ap_augmented={:.4}", self.alpha, self.ap_raw, self.ap_augmented)?;
        writeln!(
            f,
            "moran_i={:.4} expected={:.5} p={:.4} shuffle_wins={}/{}",
            self.moran.observed, self.moran.expected, self.moran.p_value, self.moran_shuffle_wins, self.moran_shuffles
        )?;
        writeln!(f, "lambda={} train={} test={}", self.lambda, self.train_regions, self.test_regions)?;
        writeln!(f, "income_r={:.4}", self.income_r)?;
        writeln!(f, "top_features={}", self.top_features.join(","))?;
        write!(f, "seconds={:.2}", self.seconds)
    }
}

/// Counts value shuffles whose Moran's I is strictly below the observed one.
pub fn shuffle_wins(pattern: &PointPattern, scheme: WeightScheme, shuffles: usize, seed: u64) -> Result<(f64, usize)> {
    let w = build_weights(pattern, scheme)?;
    let observed = morans_i(pattern, &w)?;
    let values = pattern.values();
    let mut wins = 0;
    for k in 0..shuffles {
        let mut v = values.clone();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64)));
        if morans_i(&pattern.with_values(&v)?, &w)? < observed {
            wins += 1;
        }
    }
    Ok((observed, wins))
}

/// Synthetic city to held-out income correlation.
pub fn demo(config: &DemoConfig) -> Result<DemoReport> {
    let start = Instant::now();
    let mut city = synth_city(&config.city)?;
    log::info!("synthesized {} images, {} detections", city.images.len(), city.detections.len());

    // calibration split: half the held-out images fit the prior, half alpha and isotonic
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let all = eval_images(&city.images, &city.detections, &city.truths);
    let (mut prior_set, mut validation) = (Vec::new(), Vec::new());
    for im in all {
        if rng.random::<f64>() < config.calibration_fraction {
            if rng.random::<bool>() {
                prior_set.push(im);
            } else {
                validation.push(im);
            }
        }
    }
    let calibration = Calibration::fit(&prior_set, &validation, DEFAULT_MATCH_IOU)?;
    let ap_raw = calibration.alpha_fit.ap_at(0.0).unwrap_or(f64::NAN);
    let dims_of: HashMap<&str, ImageDims> = city.images.iter().map(|im| (im.image_id.as_str(), im.dims())).collect();
    calibration.apply(&mut city.detections, &dims_of)?;

    let zips = rollup(&city.taxonomy, &city.images, &city.detections, Grouping::Zip)?;
    let points = rollup(&city.taxonomy, &city.images, &city.detections, Grouping::Point)?;
    let pattern = point_pattern(&points.regions, |r| r.avg_price)?;
    let weights = build_weights(&pattern, WeightScheme::InverseSquare)?;
    let moran = morans_i_significance(&pattern, &weights, config.moran_permutations, derive_seed(config.seed, 2))?;
    let (_, wins) =
        shuffle_wins(&pattern, WeightScheme::InverseSquare, config.moran_shuffles, derive_seed(config.seed, 3))?;

    let features = FeatureTable::from_regions(&zips.regions, &FeatureSchema::default())?;
    let joined = join_target(&features, &city.ground_truth, Target::Income);
    let table = features.subset(&joined.iter().map(|j| j.0).collect::<Vec<_>>());
    let income: Vec<f64> = joined.iter().map(|j| j.1).collect();
    let (train, test) = train_test_split(table.len(), config.train_fraction, derive_seed(config.seed, 4))?;
    let x_train: Vec<Vec<f64>> = train.iter().map(|&i| table.rows[i].clone()).collect();
    let y_train: Vec<f64> = train.iter().map(|&i| income[i]).collect();
    let folds = config.folds.min(train.len());
    let lambda = select_lambda(&x_train, &y_train, &config.lambda_grid, folds, derive_seed(config.seed, 5))?;
    let model = fit_ridge(&x_train, &y_train, lambda)?;
    let predicted = test.iter().map(|&i| model.predict(&table.rows[i])).collect::<Result<Vec<_>>>()?;
    let actual: Vec<f64> = test.iter().map(|&i| income[i]).collect();
    let income_r = pearson_r(&predicted, &actual)?;

    let correlations = correlate_attributes(&table.names, &table.rows, &income)?;
    let top_features = top_by_abs(&correlations, 2).iter().map(|c| c.name.clone()).collect();

    Ok(DemoReport {
        seed: config.seed,
        zips: zips.regions.len(),
        images: city.images.len(),
        detections: city.detections.len(),
        alpha: calibration.alpha_fit.alpha,
        ap_raw,
        ap_augmented: calibration.alpha_fit.ap,
        moran,
        moran_shuffle_wins: wins,
        moran_shuffles: config.moran_shuffles,
        lambda,
        train_regions: train.len(),
        test_regions: test.len(),
        income_r,
        correlations,
        top_features,
        seconds: start.elapsed().as_secs_f64(),
    })
}
