//! Fits the resolution and IOU histograms from a synthetic city and draws
//! training crops that follow them.
//!
//! ```text
//! cargo run --release --example crop_sampling
//! ```

use carcensus::adapt::{
    fit_iou_hist, fit_resolution_hist, rebalance_ratio, rebalance_shuffled, sample_crop, sample_resolution,
    DEFAULT_IOU_BINS, DEFAULT_REBALANCE_FACTOR, DEFAULT_RESOLUTION_BINS,
};
use carcensus::calibrate::{iou, DEFAULT_MATCH_IOU};
use carcensus::ingest::{synth_city, SyntheticCityConfig};
use carcensus::pipeline::eval_images;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> carcensus::Result<()> {
    let city = synth_city(&SyntheticCityConfig { zips: 10, images_per_zip: 50, ..Default::default() })?;
    let boxes: Vec<_> = city.truths.iter().map(|t| t.bbox()).collect();
    let res = fit_resolution_hist(&boxes, DEFAULT_RESOLUTION_BINS)?;
    let images = eval_images(&city.images, &city.detections, &city.truths);
    let ious = fit_iou_hist(&images, DEFAULT_MATCH_IOU, DEFAULT_IOU_BINS)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<f64> = (0..5).map(|_| sample_resolution(&res, &mut rng)).collect();
    println!("resolutions: {draws:.1?}");

    println!("iou bin   target  sampled");
    let dims = city.images[0].dims();
    let truth =
        city.truths.iter().find(|t| t.image_id == city.images[0].image_id).map(|t| t.bbox()).unwrap_or(boxes[0]);
    let mut counts = vec![0usize; ious.len()];
    let n = 2000;
    for _ in 0..n {
        let crop = sample_crop(&truth, dims, &ious, &mut rng)?;
        if let Some(k) = ious.bin_of(iou(&crop, &truth)) {
            counts[k] += 1;
        }
    }
    for (k, p) in ious.probabilities().iter().enumerate() {
        let (lo, hi) = ious.bounds(k);
        println!("[{lo:.1},{hi:.1})  {p:.3}   {:.3}", counts[k] as f64 / n as f64);
    }

    let streetview: Vec<String> = (0..4).map(|i| format!("sv{i}")).collect();
    let product: Vec<String> = (0..6).map(|i| format!("pr{i}")).collect();
    let order = rebalance_shuffled(&streetview, &product, 3, 1)?;
    println!("mixed order: {}", order.join(" "));
    println!(
        "ratio at 34,712 street / 313,099 product: {:.3}",
        rebalance_ratio(34_712, 313_099, DEFAULT_REBALANCE_FACTOR)
    );
    Ok(())
}
