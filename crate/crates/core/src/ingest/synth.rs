//! Seeded synthetic cities with planted car populations.
//!
//! Zips are laid out on a grid of GPS points spaced 25 m apart, each point
//! captured at six rotations. Every zip gets a median income; car classes are
//! drawn from a mixture whose price tilt follows income, so average car price
//! rises with income at a rate set by `price_income_coupling`. A noisy
//! detector and classifier then turn the planted cars into detection records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::census::truncate_topk;
use crate::error::{Error, Result};
use crate::ingest::{
    write_detection, write_ground_truth, write_images, write_truth_boxes, BBox, DetectionRecord, GeoImage,
    GroundTruthRow, ImageDims, TruthBox,
};
use crate::numeric::CompensatedSum;
use crate::taxonomy::{is_foreign_country, BodyType, CarClass, ClassTable, MakeInfo, COMMON_MAKES};

pub const GRID_SPACING_M: f64 = 25.0;
pub const ROTATIONS: usize = 6;
const METERS_PER_DEGREE: f64 = 111_195.0;

/// Makes outside the default feature schema; they land in the pooled "other" slot.
const EXTRA_MAKES: [MakeInfo; 4] = [
    MakeInfo { name: "Hillman", country: "UK", price_tier: 1 },
    MakeInfo { name: "Studebaker", country: "USA", price_tier: 2 },
    MakeInfo { name: "Trabant", country: "Germany", price_tier: 1 },
    MakeInfo { name: "Yugo", country: "Serbia", price_tier: 1 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxPlacement {
    /// Cars sit in a band across the lower-middle of the frame, larger when lower.
    Planted,
    /// Cars are placed like spurious boxes: anywhere, any size.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    pub true_score_mean: f64,
    pub true_score_sd: f64,
    pub false_score_mean: f64,
    pub false_score_sd: f64,
    pub false_positives_per_image: f64,
    pub miss_rate: f64,
    /// Standard deviation of box jitter as a fraction of box size.
    pub box_jitter: f64,
    /// Logit bonus of the true class in the simulated classifier.
    pub class_margin: f64,
    /// Standard deviation of the remaining class logits.
    pub logit_spread: f64,
}

impl DetectorNoise {
    pub fn low() -> Self {
        DetectorNoise {
            true_score_mean: 2.0,
            true_score_sd: 0.3,
            false_score_mean: -2.0,
            false_score_sd: 0.3,
            false_positives_per_image: 0.0,
            miss_rate: 0.0,
            box_jitter: 0.02,
            class_margin: 14.0,
            logit_spread: 0.5,
        }
    }

    pub fn moderate() -> Self {
        DetectorNoise {
            true_score_mean: 1.0,
            true_score_sd: 1.0,
            false_score_mean: -0.5,
            false_score_sd: 1.0,
            false_positives_per_image: 0.6,
            miss_rate: 0.1,
            box_jitter: 0.06,
            class_margin: 4.0,
            logit_spread: 1.0,
        }
    }

    pub fn high() -> Self {
        DetectorNoise {
            true_score_mean: 0.5,
            true_score_sd: 1.2,
            false_score_mean: 0.0,
            false_score_sd: 1.2,
            false_positives_per_image: 1.5,
            miss_rate: 0.25,
            box_jitter: 0.12,
            class_margin: 2.0,
            logit_spread: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCityConfig {
    pub city_id: String,
    pub zips: usize,
    pub images_per_zip: usize,
    /// Explicit per-zip median incomes; generated from `income_range` when absent.
    pub median_incomes: Option<Vec<f64>>,
    pub income_range: (f64, f64),
    /// Spatially smooth incomes across the zip grid instead of random placement.
    pub segregated: bool,
    pub price_income_coupling: f64,
    /// Number of income bands for the make mixture.
    pub income_bands: usize,
    /// Log-weight tilt toward foreign makes per band, from -tilt (lowest) to +tilt (highest).
    pub foreign_band_tilt: f64,
    pub cars_per_image_range: (f64, f64),
    pub classes: usize,
    pub placement: BoxPlacement,
    pub noise: DetectorNoise,
    pub topk: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// (latitude, longitude) of the south-west corner.
    pub origin: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticCityConfig {
    fn default() -> Self {
        SyntheticCityConfig {
            city_id: "synth-city".into(),
            zips: 100,
            images_per_zip: 120,
            median_incomes: None,
            income_range: (25_000.0, 160_000.0),
            segregated: true,
            price_income_coupling: 2.0,
            income_bands: 3,
            foreign_band_tilt: 0.5,
            cars_per_image_range: (0.8, 2.4),
            classes: 240,
            placement: BoxPlacement::Planted,
            noise: DetectorNoise::moderate(),
            topk: crate::ingest::MAX_CLASS_PROBS,
            image_width: 640,
            image_height: 480,
            origin: (41.80, -87.70),
            seed: 1,
        }
    }
}

impl SyntheticCityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.zips == 0 {
            return bad("zip count must be positive");
        }
        if self.images_per_zip == 0 {
            return bad("images per zip must be positive");
        }
        if self.classes == 0 {
            return bad("class count must be positive");
        }
        if self.topk == 0 || self.topk > crate::ingest::MAX_CLASS_PROBS {
            return bad("topk must be in 1..=20");
        }
        let (lo, hi) = self.income_range;
        if !(lo > 0.0 && hi > lo) {
            return bad("income range must satisfy 0 < low < high");
        }
        if let Some(incomes) = &self.median_incomes {
            if incomes.len() != self.zips {
                return bad("median_incomes length must equal zip count");
            }
            if incomes.iter().any(|&v| !(v > 0.0)) {
                return bad("median incomes must be positive");
            }
        }
        let (clo, chi) = self.cars_per_image_range;
        if !(clo >= 0.0 && chi >= clo) {
            return bad("cars_per_image_range must satisfy 0 <= low <= high");
        }
        if self.income_bands == 0 {
            return bad("income_bands must be positive");
        }
        let n = &self.noise;
        if n.true_score_sd < 0.0 || n.false_score_sd < 0.0 || n.box_jitter < 0.0 || n.logit_spread < 0.0 {
            return bad("noise standard deviations must be non-negative");
        }
        if !(0.0..1.0).contains(&n.miss_rate) || n.false_positives_per_image < 0.0 {
            return bad("miss_rate must be in [0,1) and false positive rate non-negative");
        }
        if self.image_width < 64 || self.image_height < 64 {
            return bad("images must be at least 64x64");
        }
        Ok(())
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.image_width, self.image_height)
    }
}

/// Generator output. Truth boxes are the planted cars.
#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub config: SyntheticCityConfig,
    pub taxonomy: ClassTable,
    pub images: Vec<GeoImage>,
    pub detections: Vec<DetectionRecord>,
    pub truths: Vec<TruthBox>,
    pub ground_truth: Vec<GroundTruthRow>,
}

impl SyntheticCity {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.taxonomy.write_csv(BufWriter::new(File::create(dir.join("taxonomy.csv"))?))?;
        write_images(BufWriter::new(File::create(dir.join("images.csv"))?), &self.images)?;
        write_truth_boxes(BufWriter::new(File::create(dir.join("truth_boxes.csv"))?), &self.truths)?;
        write_ground_truth(BufWriter::new(File::create(dir.join("ground_truth.csv"))?), &self.ground_truth)?;
        let mut out = BufWriter::new(File::create(dir.join("detections.txt"))?);
        for d in &self.detections {
            write_detection(&mut out, d)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn zip_codes(&self) -> Vec<String> {
        self.ground_truth.iter().map(|g| g.region.clone()).collect()
    }
}

pub fn zip_code(index: usize) -> String {
    format!("{:05}", 10_000 + index)
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd.max(0.0)).expect("finite normal parameters")
}

fn synthetic_taxonomy(classes: usize, rng: &mut ChaCha8Rng) -> Result<ClassTable> {
    let makes: Vec<MakeInfo> = COMMON_MAKES.iter().chain(EXTRA_MAKES.iter()).copied().collect();
    let tier_price = [12_000.0, 20_000.0, 30_000.0, 50_000.0, 110_000.0];
    let body_weights =
        WeightedIndex::new([30.0, 10.0, 20.0, 10.0, 3.0, 4.0, 6.0, 4.0, 4.0, 6.0, 3.0]).expect("positive weights");
    let body_mpg = [28.0, 26.0, 20.0, 31.0, 24.0, 26.0, 21.0, 16.0, 17.0, 16.0, 18.0];
    let jitter = normal(0.0, 0.25);
    let mpg_noise = normal(0.0, 2.0);

    let mut out = Vec::with_capacity(classes);
    for id in 0..classes {
        let make = if id < makes.len() { makes[id] } else { makes[rng.random_range(0..makes.len())] };
        let body_idx = body_weights.sample(rng);
        let body_type = BodyType::ALL[body_idx];
        let price = (tier_price[make.price_tier as usize - 1] * f64::exp(jitter.sample(rng)) / 10.0).round() * 10.0;
        let mpg = (body_mpg[body_idx] - 1.5 * (make.price_tier as f64 - 2.0) + mpg_noise.sample(rng)).max(8.0);
        let year_start = rng.random_range(1990..2014);
        out.push(CarClass {
            class_id: id as u32,
            make: make.name.to_string(),
            model: format!("{} M{}", make.name, id % 7),
            submodel: format!("S{}", id % 3),
            year_start,
            year_end: year_start + rng.random_range(0..4),
            trim: format!("T{}", id % 4),
            body_type,
            price_usd: Some(price),
            mpg: Some((mpg * 10.0).round() / 10.0),
            country: make.country.to_string(),
            is_foreign: is_foreign_country(make.country),
        });
    }
    ClassTable::from_classes(out)
}

/// Box placement that follows the planted location/size prior.
fn planted_box(dims: ImageDims, rng: &mut ChaCha8Rng) -> BBox {
    let (w_img, h_img) = (dims.width as f64, dims.height as f64);
    let y = normal(0.62 * h_img, 0.05 * h_img).sample(rng).clamp(0.4 * h_img, 0.85 * h_img);
    let x = rng.random_range(0.12 * w_img..0.88 * w_img);
    let t = (y / h_img - 0.3) / 0.6;
    let w = w_img * (0.05 + 0.25 * t) * f64::exp(normal(0.0, 0.1).sample(rng));
    let h = w * rng.random_range(0.5..0.75);
    fit_inside(BBox { x_center: x, y_center: y, width: w, height: h }, dims)
}

/// Placement-independent box: any centre, log-uniform size.
fn uniform_box(dims: ImageDims, rng: &mut ChaCha8Rng) -> BBox {
    let (w_img, h_img) = (dims.width as f64, dims.height as f64);
    let w = f64::exp(rng.random_range((16.0f64).ln()..(0.5 * w_img).ln()));
    let h = (w * rng.random_range(0.4..1.0)).min(0.9 * h_img);
    let x = rng.random_range(w / 2.0..w_img - w / 2.0);
    let y = rng.random_range(h / 2.0..h_img - h / 2.0);
    BBox { x_center: x, y_center: y, width: w, height: h }
}

fn fit_inside(b: BBox, dims: ImageDims) -> BBox {
    let w = b.width.min(dims.width as f64 - 2.0).max(2.0);
    let h = b.height.min(dims.height as f64 - 2.0).max(2.0);
    let x = b.x_center.clamp(w / 2.0, dims.width as f64 - w / 2.0);
    let y = b.y_center.clamp(h / 2.0, dims.height as f64 - h / 2.0);
    BBox { x_center: x, y_center: y, width: w, height: h }
}

fn jitter_box(b: &BBox, sd: f64, dims: ImageDims, rng: &mut ChaCha8Rng) -> BBox {
    if sd == 0.0 {
        return *b;
    }
    let n = normal(0.0, sd);
    let moved = BBox {
        x_center: b.x_center + n.sample(rng) * b.width,
        y_center: b.y_center + n.sample(rng) * b.height,
        width: b.width * f64::exp(n.sample(rng)),
        height: b.height * f64::exp(n.sample(rng)),
    };
    fit_inside(moved, dims)
}

struct Classifier<'a> {
    table: &'a ClassTable,
    margin: f64,
    spread: Normal<f64>,
    topk: usize,
    logits: Vec<f64>,
}

impl Classifier<'_> {
    fn classify(&mut self, truth: Option<u32>, rng: &mut ChaCha8Rng) -> Vec<crate::ingest::ClassProb> {
        let true_make = truth.map(|c| self.table.make_index(c).expect("planted class in table"));
        for (j, l) in self.logits.iter_mut().enumerate() {
            *l = self.spread.sample(rng);
            if let Some(m) = true_make {
                if self.table.make_index(j as u32).ok() == Some(m) {
                    *l += 1.0;
                }
            }
        }
        if let Some(c) = truth {
            self.logits[c as usize] += self.margin;
        }
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in self.logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in self.logits.iter_mut() {
            *l /= total;
        }
        truncate_topk(&self.logits, self.topk).expect("softmax output is a distribution")
    }
}

struct ZipPlan {
    income: f64,
    cars_per_image: f64,
    class_weights: WeightedIndex<f64>,
    burglary: f64,
    total_crime: f64,
}

/// Generates a synthetic city. Identical configs give identical output.
pub fn synth_city(config: &SyntheticCityConfig) -> Result<SyntheticCity> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let taxonomy = synthetic_taxonomy(config.classes, &mut rng)?;
    let dims = config.dims();

    let grid_x = (config.zips as f64).sqrt().ceil() as usize;
    let points_per_zip = config.images_per_zip.div_ceil(ROTATIONS);
    let side = (points_per_zip as f64).sqrt().ceil() as usize;

    // Incomes, standardised to u in [-1, 1] on a log scale.
    let (lo, hi) = config.income_range;
    let incomes: Vec<f64> = match &config.median_incomes {
        Some(v) => v.clone(),
        None => {
            let noise = normal(0.0, 0.2);
            (0..config.zips)
                .map(|z| {
                    let u = if config.segregated {
                        let gx = (z % grid_x) as f64 / (grid_x.max(2) - 1) as f64;
                        let gy = (z / grid_x) as f64 / (grid_x.max(2) - 1) as f64;
                        (0.55 * (2.0 * gx - 1.0) + 0.35 * (2.0 * gy - 1.0) + noise.sample(&mut rng)).clamp(-1.0, 1.0)
                    } else {
                        rng.random_range(-1.0..=1.0)
                    };
                    lo * (hi / lo).powf((u + 1.0) / 2.0)
                })
                .collect()
        }
    };
    let (log_lo, log_hi) = {
        let mn = incomes.iter().copied().fold(f64::INFINITY, f64::min).min(lo);
        let mx = incomes.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(hi);
        (mn.ln(), mx.ln())
    };

    // Per-class standardised log price, foreign sign and base popularity.
    let log_prices: Vec<f64> = taxonomy.classes().iter().map(|c| c.price_usd.unwrap_or(1.0).max(1.0).ln()).collect();
    let lp_mean = crate::numeric::mean(&log_prices);
    let lp_sd = crate::numeric::population_variance(&log_prices).sqrt().max(1e-12);
    let popularity = normal(0.0, 0.5);
    let base: Vec<f64> = (0..taxonomy.len()).map(|_| popularity.sample(&mut rng)).collect();

    let crime_noise = normal(0.0, 1.0);
    let (clo, chi) = config.cars_per_image_range;
    let cpi_mid = (clo + chi) / 2.0;
    let plans: Vec<ZipPlan> = incomes
        .iter()
        .map(|&income| {
            let u = 2.0 * (income.ln() - log_lo) / (log_hi - log_lo).max(1e-12) - 1.0;
            let band = (((u + 1.0) / 2.0 * config.income_bands as f64).floor() as usize).min(config.income_bands - 1);
            let band_pos =
                if config.income_bands > 1 { 2.0 * band as f64 / (config.income_bands - 1) as f64 - 1.0 } else { 0.0 };
            let weights: Vec<f64> = taxonomy
                .classes()
                .iter()
                .enumerate()
                .map(|(c, class)| {
                    let s = (log_prices[c] - lp_mean) / lp_sd;
                    let f = if class.is_foreign { 1.0 } else { -1.0 };
                    (base[c] + config.price_income_coupling * u * s + config.foreign_band_tilt * band_pos * f).exp()
                })
                .collect();
            let cars_per_image = if chi > clo { rng.random_range(clo..=chi) } else { clo };
            let burglary = (12.0 + 6.0 * (cars_per_image - cpi_mid) - 4.0 * u + crime_noise.sample(&mut rng)).max(0.0);
            let total_crime = (3.0 * burglary + 10.0 + 2.0 * crime_noise.sample(&mut rng)).max(0.0);
            ZipPlan {
                income,
                cars_per_image,
                class_weights: WeightedIndex::new(weights).expect("positive class weights"),
                burglary,
                total_crime,
            }
        })
        .collect();

    let mut classifier = Classifier {
        table: &taxonomy,
        margin: config.noise.class_margin,
        spread: normal(0.0, config.noise.logit_spread),
        topk: config.topk,
        logits: vec![0.0; taxonomy.len()],
    };
    let true_score = normal(config.noise.true_score_mean, config.noise.true_score_sd);
    let false_score = normal(config.noise.false_score_mean, config.noise.false_score_sd);
    let fp_count = (config.noise.false_positives_per_image > 0.0)
        .then(|| Poisson::new(config.noise.false_positives_per_image).expect("positive rate"));

    let (lat0, lon0) = config.origin;
    let lon_scale = METERS_PER_DEGREE * lat0.to_radians().cos();

    let mut images = Vec::with_capacity(config.zips * config.images_per_zip);
    let mut detections = Vec::new();
    let mut truths = Vec::new();
    let mut ground_truth = Vec::with_capacity(config.zips);

    for (z, plan) in plans.iter().enumerate() {
        let zip = zip_code(z);
        let (zx, zy) = (z % grid_x, z / grid_x);
        let car_count = (plan.cars_per_image > 0.0).then(|| Poisson::new(plan.cars_per_image).expect("positive rate"));
        let mut price_sum = CompensatedSum::new();
        let mut mpg_sum = CompensatedSum::new();
        let (mut priced, mut with_mpg, mut foreign, mut planted) = (0usize, 0usize, 0usize, 0usize);

        for k in 0..config.images_per_zip {
            let (p, r) = (k / ROTATIONS, k % ROTATIONS);
            let (px, py) = (p % side, p / side);
            let east = ((zx * side + px) as f64) * GRID_SPACING_M;
            let north = ((zy * side + py) as f64) * GRID_SPACING_M;
            let image_id = format!("{zip}-{p:05}-{r}");
            images.push(GeoImage {
                image_id: image_id.clone(),
                lat: lat0 + north / METERS_PER_DEGREE,
                lon: lon0 + east / lon_scale,
                rotation: r as u8,
                city_id: config.city_id.clone(),
                zip_code: zip.clone(),
                width_px: dims.width,
                height_px: dims.height,
            });

            let n_cars = car_count.as_ref().map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
            for _ in 0..n_cars {
                let class_id = plan.class_weights.sample(&mut rng) as u32;
                let class = taxonomy.get(class_id)?;
                if let Some(price) = class.price_usd {
                    price_sum.add(price);
                    priced += 1;
                }
                if let Some(m) = class.mpg {
                    mpg_sum.add(m);
                    with_mpg += 1;
                }
                foreign += class.is_foreign as usize;
                planted += 1;

                let bbox = match config.placement {
                    BoxPlacement::Planted => planted_box(dims, &mut rng),
                    BoxPlacement::Uniform => uniform_box(dims, &mut rng),
                };
                truths.push(TruthBox {
                    image_id: image_id.clone(),
                    x_center: bbox.x_center,
                    y_center: bbox.y_center,
                    width: bbox.width,
                    height: bbox.height,
                    class_id,
                });
                if rng.random::<f64>() < config.noise.miss_rate {
                    continue;
                }
                detections.push(DetectionRecord {
                    image_id: image_id.clone(),
                    bbox: jitter_box(&bbox, config.noise.box_jitter, dims, &mut rng),
                    raw_score: true_score.sample(&mut rng),
                    car_probability: None,
                    class_probs: classifier.classify(Some(class_id), &mut rng),
                });
            }
            let n_fp = fp_count.as_ref().map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
            for _ in 0..n_fp {
                detections.push(DetectionRecord {
                    image_id: image_id.clone(),
                    bbox: uniform_box(dims, &mut rng),
                    raw_score: false_score.sample(&mut rng),
                    car_probability: None,
                    class_probs: classifier.classify(None, &mut rng),
                });
            }
        }

        ground_truth.push(GroundTruthRow {
            region: zip,
            median_income: plan.income,
            burglary_rate: Some(plan.burglary),
            total_crime_rate: Some(plan.total_crime),
            avg_price: (priced > 0).then(|| price_sum.value() / priced as f64),
            avg_mpg: (with_mpg > 0).then(|| mpg_sum.value() / with_mpg as f64),
            pct_foreign: (planted > 0).then(|| foreign as f64 / planted as f64),
            cars_per_image: Some(planted as f64 / config.images_per_zip as f64),
        });
    }

    Ok(SyntheticCity { config: config.clone(), taxonomy, images, detections, truths, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticCityConfig {
        SyntheticCityConfig { zips: 9, images_per_zip: 24, classes: 90, seed, ..Default::default() }
    }

    #[test]
    fn zero_images_is_config_error() {
        let cfg = SyntheticCityConfig { images_per_zip: 0, ..small(1) };
        assert!(matches!(synth_city(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn layout_has_six_rotations_per_point() {
        let city = synth_city(&small(3)).unwrap();
        assert_eq!(city.images.len(), 9 * 24);
        let first_point: Vec<_> = city.images.iter().filter(|im| im.image_id.starts_with("10000-00000-")).collect();
        assert_eq!(first_point.len(), 6);
        assert!(first_point.iter().all(|im| im.lat == first_point[0].lat && im.lon == first_point[0].lon));
        // neighbouring points are 25 m apart
        let a = &city.images[0];
        let b = city.images.iter().find(|im| im.image_id.starts_with("10000-00001-")).unwrap();
        let d = crate::spatial::haversine_m(a.lat, a.lon, b.lat, b.lon);
        assert!((d - 25.0).abs() < 0.1, "{d}");
    }

    #[test]
    fn records_are_sorted_and_valid() {
        let city = synth_city(&small(4)).unwrap();
        assert!(city.detections.windows(2).all(|w| w[0].image_id <= w[1].image_id));
        let dims = city.config.dims();
        for d in &city.detections {
            d.validate().unwrap();
            assert!(d.bbox.inside(dims));
            assert!(d.class_probs.len() <= 20);
        }
        for t in &city.truths {
            assert!(t.bbox().inside(dims));
        }
    }
}
