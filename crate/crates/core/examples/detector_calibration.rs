//! Learns the location prior weight and the isotonic score map on a synthetic
//! city, then prints AP across the alpha grid and a reliability table.
//!
//! ```text
//! cargo run --release --example detector_calibration -- [seed]
//! ```

use carcensus::calibrate::{calibration_pairs, DEFAULT_MATCH_IOU};
use carcensus::ingest::{synth_city, SyntheticCityConfig};
use carcensus::pipeline::{eval_images, Calibration};

fn main() -> carcensus::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let city = synth_city(&SyntheticCityConfig { zips: 30, images_per_zip: 60, seed, ..Default::default() })?;
    let images = eval_images(&city.images, &city.detections, &city.truths);
    let (prior_set, validation) = images.split_at(images.len() / 2);

    let cal = Calibration::fit(prior_set, validation, DEFAULT_MATCH_IOU)?;
    for (alpha, ap) in &cal.alpha_fit.curve {
        println!("alpha={alpha:.1} ap={ap:.4}");
    }
    println!("selected alpha={} ({} isotonic blocks)", cal.alpha_fit.alpha, cal.isotonic.values().len());

    // reliability: mean calibrated probability against hit rate, in deciles
    let pairs = calibration_pairs(validation, DEFAULT_MATCH_IOU, |i, d| {
        let det = &validation[i].detections[d];
        cal.car_probability(det.score, &det.bbox, validation[i].dims)
    });
    let mut bins = [(0.0, 0usize, 0usize); 10];
    for (p, hit) in &pairs {
        let b = &mut bins[((p * 10.0) as usize).min(9)];
        b.0 += p;
        b.1 += 1;
        b.2 += *hit as usize;
    }
    println!("bin    n  mean_p  hit_rate");
    for (k, (sum, n, hits)) in bins.iter().enumerate().filter(|(_, b)| b.1 > 0) {
        println!("{:.1}  {n:>4}  {:.3}   {:.3}", k as f64 / 10.0, sum / *n as f64, *hits as f64 / *n as f64);
    }
    Ok(())
}
