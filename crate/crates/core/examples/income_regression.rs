//! Builds zip-level car features, selects the ridge penalty by cross-validation
//! on a small training split and scores held-out zips.
//!
//! ```text
//! cargo run --release --example income_regression -- [train_fraction]
//! ```

use carcensus::calibrate::DEFAULT_MATCH_IOU;
use carcensus::census::Grouping;
use carcensus::demographics::{
    default_lambda_grid, fit_ridge, join_target, pearson_r, select_lambda, train_test_split, FeatureSchema,
    FeatureTable, Target, TRAIN_FRACTION,
};
use carcensus::ingest::{synth_city, SyntheticCityConfig};
use carcensus::pipeline::{eval_images, rollup, Calibration};

fn main() -> carcensus::Result<()> {
    let fraction = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(TRAIN_FRACTION);
    let mut city = synth_city(&SyntheticCityConfig { images_per_zip: 60, seed: 5, ..Default::default() })?;
    let images = eval_images(&city.images, &city.detections, &city.truths);
    let (a, b) = images.split_at(images.len() / 5);
    let cal = Calibration::fit(a, &b[..a.len()], DEFAULT_MATCH_IOU)?;
    let dims = city.images.iter().map(|im| (im.image_id.as_str(), im.dims())).collect();
    cal.apply(&mut city.detections, &dims)?;

    let zips = rollup(&city.taxonomy, &city.images, &city.detections, Grouping::Zip)?;
    let features = FeatureTable::from_regions(&zips.regions, &FeatureSchema::default())?;
    let joined = join_target(&features, &city.ground_truth, Target::Income);
    let (train, test) = train_test_split(joined.len(), fraction, 9)?;
    let rows = |idx: &[usize]| idx.iter().map(|&k| features.rows[joined[k].0].clone()).collect::<Vec<_>>();
    let ys = |idx: &[usize]| idx.iter().map(|&k| joined[k].1).collect::<Vec<_>>();

    let (x, y) = (rows(&train), ys(&train));
    let lambda = select_lambda(&x, &y, &default_lambda_grid(), 5.min(x.len()), 10)?;
    let model = fit_ridge(&x, &y, lambda)?.with_feature_names(features.names.clone())?;
    let predicted = rows(&test).iter().map(|r| model.predict(r)).collect::<carcensus::Result<Vec<_>>>()?;
    println!("train={} test={} lambda={lambda}", train.len(), test.len());
    println!("held-out r={:.4}", pearson_r(&predicted, &ys(&test))?);

    let mut weights: Vec<(&str, f64)> =
        model.feature_names.iter().map(String::as_str).zip(model.standardized_weights().iter().copied()).collect();
    weights.sort_by(|p, q| q.1.abs().total_cmp(&p.1.abs()));
    for (name, w) in weights.iter().take(6) {
        println!("  {name:<20} {w:+.1}");
    }
    Ok(())
}
