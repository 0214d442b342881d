//! Calibrates detections, rolls them up by zip code and prints the richest and
//! poorest zips next to what their cars say about them.
//!
//! ```text
//! cargo run --release --example regional_rollup
//! ```

use std::collections::HashMap;

use carcensus::calibrate::DEFAULT_MATCH_IOU;
use carcensus::census::Grouping;
use carcensus::ingest::{synth_city, SyntheticCityConfig};
use carcensus::pipeline::{eval_images, rollup, Calibration};

fn main() -> carcensus::Result<()> {
    let mut city = synth_city(&SyntheticCityConfig { zips: 40, images_per_zip: 80, ..Default::default() })?;
    let images = eval_images(&city.images, &city.detections, &city.truths);
    let (a, b) = images.split_at(images.len() / 2);
    let cal = Calibration::fit(a, b, DEFAULT_MATCH_IOU)?;
    let dims = city.images.iter().map(|im| (im.image_id.as_str(), im.dims())).collect();
    cal.apply(&mut city.detections, &dims)?;

    let zips = rollup(&city.taxonomy, &city.images, &city.detections, Grouping::Zip)?;
    let income: HashMap<&str, f64> = city.ground_truth.iter().map(|g| (g.region.as_str(), g.median_income)).collect();
    let mut rows: Vec<_> = zips.regions.iter().filter(|r| income.contains_key(r.region.as_str())).collect();
    rows.sort_by(|x, y| income[y.region.as_str()].total_cmp(&income[x.region.as_str()]));

    println!("{:<7} {:>9} {:>10} {:>6} {:>8} {:>6}", "zip", "income", "avg_price", "mpg", "foreign", "cars");
    let show = rows.iter().take(5).chain(rows.iter().rev().take(5).rev());
    for r in show {
        println!(
            "{:<7} {:>9.0} {:>10.0} {:>6.1} {:>7.1}% {:>6.1}",
            r.region,
            income[r.region.as_str()],
            r.avg_price.unwrap_or(f64::NAN),
            r.avg_mpg.unwrap_or(f64::NAN),
            100.0 * r.pct_foreign.unwrap_or(f64::NAN),
            r.total_expected_cars,
        );
    }
    Ok(())
}
