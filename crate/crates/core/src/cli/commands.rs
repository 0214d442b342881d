use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::output::{write_atomic, write_json_atomic};
use super::*;
use crate::adapt::{fit_iou_hist, fit_resolution_hist, sample_crop, Histogram};
use crate::calibrate::{
    average_precision, calibration_pairs, default_alpha_grid, fit_isotonic, fit_location_prior, iou, learn_alpha,
    EvalImage, IsotonicModel, LocationPrior, ScoredBox,
};
use crate::census::{
    read_region_table, write_point_table, write_region_table, Aggregator, ExpectationOptions, RegionStats,
};
use crate::demographics::{
    correlate_attributes, default_lambda_grid, fit_ridge, join_target, pearson_r, select_lambda, train_test_split,
    weighted_mean_features, FeatureSchema, FeatureTable, RidgeModel,
};
use crate::ingest::{
    read_detections, read_ground_truth, read_images, read_truth_boxes, synth_city, write_detection, write_ground_truth,
    write_images, write_truth_boxes, BoxPlacement, DetectionRecord, DetectorNoise, GeoImage, GroundTruthRow, ImageDims,
    SyntheticCityConfig, TruthBox,
};
use crate::numeric::derive_seed;
use crate::pipeline::{demo, DemoConfig};
use crate::spatial::{
    build_weights, classify_clusters, getis_ord_gistar, morans_i_significance, read_point_pattern, write_gistar_table,
    ClusterLabel,
};
use crate::taxonomy::{load_taxonomy, BodyType, ClassTable};

pub(super) fn dispatch(command: &Command) -> Result<RunFiles> {
    match command {
        Command::Synth(a) => synth(a),
        Command::FitPrior(a) => fit_prior(a),
        Command::LearnAlpha(a) => learn_alpha_cmd(a),
        Command::FitCalibration(a) => fit_calibration(a),
        Command::Calibrate(a) => calibrate(a),
        Command::EvalAp(a) => eval_ap(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Moran(a) => moran(a),
        Command::Gistar(a) => gistar(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Correlate(a) => correlate(a),
        Command::FitResHist(a) => fit_res_hist(a),
        Command::FitIouHist(a) => fit_iou_hist_cmd(a),
        Command::SampleCrops(a) => sample_crops(a),
        Command::Demo(a) => demo_cmd(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn load_prior(path: &Path) -> Result<LocationPrior> {
    let prior: LocationPrior = read_json(path)?;
    prior.validate()?;
    Ok(prior)
}

fn parse_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::arg(format!("bad number `{s}` in list"))))
        .collect()
}

fn dims_by_image(images: &[GeoImage]) -> HashMap<&str, ImageDims> {
    images.iter().map(|im| (im.image_id.as_str(), im.dims())).collect()
}

/// Streams a detection file into per-image evaluation sets, keeping only box
/// and score per detection.
fn load_eval_set(set: &EvalSet) -> Result<(Vec<EvalImage>, Vec<PathBuf>)> {
    let images = read_images(open(&set.images)?)?;
    let truths = read_truth_boxes(open(&set.truths)?)?;
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
    for record in read_detections(open(&set.input)?) {
        let r = record?;
        let i = *index
            .get(r.image_id.as_str())
            .ok_or_else(|| Error::Validation(format!("image `{}` has no metadata", r.image_id)))?;
        out[i].detections.push(ScoredBox { bbox: r.bbox, score: r.raw_score });
    }
    for t in &truths {
        if let Some(&i) = index.get(t.image_id.as_str()) {
            out[i].truths.push(t.bbox());
        }
    }
    Ok((out, vec![set.input.clone(), set.truths.clone(), set.images.clone()]))
}

fn synth(a: &SynthArgs) -> Result<RunFiles> {
    let config = SyntheticCityConfig {
        city_id: a.city.clone(),
        zips: a.zips,
        images_per_zip: a.images_per_zip,
        classes: a.classes,
        placement: if a.placement == "uniform" { BoxPlacement::Uniform } else { BoxPlacement::Planted },
        noise: match a.noise.as_str() {
            "low" => DetectorNoise::low(),
            "high" => DetectorNoise::high(),
            _ => DetectorNoise::moderate(),
        },
        price_income_coupling: a.coupling,
        segregated: !a.unsegregated,
        topk: a.topk,
        seed: a.seed,
        ..SyntheticCityConfig::default()
    };
    let city = synth_city(&config)?;
    let dir = &a.output;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("taxonomy.csv"), |w| city.taxonomy.write_csv(w))?;
    write_atomic(&dir.join("images.csv"), |w| write_images(w, &city.images))?;
    write_atomic(&dir.join("truth_boxes.csv"), |w| write_truth_boxes(w, &city.truths))?;
    write_atomic(&dir.join("ground_truth.csv"), |w| write_ground_truth(w, &city.ground_truth))?;
    write_atomic(&dir.join("detections.txt"), |w| {
        for d in &city.detections {
            write_detection(w, d)?;
        }
        Ok(())
    })?;
    println!(
        "zips={} images={} detections={} truths={}",
        city.ground_truth.len(),
        city.images.len(),
        city.detections.len(),
        city.truths.len()
    );
    Ok(RunFiles { inputs: vec![], outputs: vec![dir.clone()] })
}

fn fit_prior(a: &FitPriorArgs) -> Result<RunFiles> {
    let images = read_images(open(&a.images)?)?;
    let dims = dims_by_image(&images);
    let truths = read_truth_boxes(open(&a.input)?)?;
    let boxes = truths
        .iter()
        .map(|t| {
            let d = dims
                .get(t.image_id.as_str())
                .ok_or_else(|| Error::Validation(format!("image `{}` has no metadata", t.image_id)))?;
            Ok((t.bbox(), *d))
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = fit_location_prior(&boxes, a.bins)?;
    write_json_atomic(&a.output, &prior)?;
    println!("boxes={} bins={}", boxes.len(), prior.counts().len());
    Ok(RunFiles { inputs: vec![a.input.clone(), a.images.clone()], outputs: vec![a.output.clone()] })
}

fn learn_alpha_cmd(a: &LearnAlphaArgs) -> Result<RunFiles> {
    let prior = load_prior(&a.prior)?;
    let (images, mut inputs) = load_eval_set(&a.set)?;
    let grid = match &a.alpha_grid {
        Some(g) => parse_list(g)?,
        None => default_alpha_grid(),
    };
    let fit = learn_alpha(&prior, &images, a.set.iou, &grid)?;
    for (alpha, ap) in &fit.curve {
        println!("alpha={alpha} ap={ap:.6}");
    }
    println!("selected_alpha={} ap={:.6}", fit.alpha, fit.ap);
    write_json_atomic(&a.output, &prior.with_alpha(fit.alpha))?;
    inputs.push(a.prior.clone());
    Ok(RunFiles { inputs, outputs: vec![a.output.clone()] })
}

fn fit_calibration(a: &FitCalibrationArgs) -> Result<RunFiles> {
    let prior = load_prior(&a.prior)?;
    let (images, mut inputs) = load_eval_set(&a.set)?;
    let pairs = calibration_pairs(&images, a.set.iou, |i, d| {
        let det = &images[i].detections[d];
        prior.augment_score(det.score, &det.bbox, images[i].dims)
    });
    let model = fit_isotonic(&pairs)?;
    write_json_atomic(&a.output, &model)?;
    println!("pairs={} blocks={}", pairs.len(), model.values().len());
    inputs.push(a.prior.clone());
    Ok(RunFiles { inputs, outputs: vec![a.output.clone()] })
}

/// Keeps the `k` most probable classes, ties to the smaller id.
fn truncate_record(r: &mut DetectionRecord, k: usize) {
    if r.class_probs.len() > k {
        r.class_probs.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.class_id.cmp(&b.class_id)));
        r.class_probs.truncate(k);
    }
}

fn check_topk(k: usize) -> Result<()> {
    if k == 0 || k > crate::ingest::MAX_CLASS_PROBS {
        return Err(Error::arg(format!("--topk must be in 1..={}", crate::ingest::MAX_CLASS_PROBS)));
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> Result<RunFiles> {
    check_topk(a.topk)?;
    let prior = load_prior(&a.prior)?;
    let model: IsotonicModel = read_json(&a.model)?;
    model.validate()?;
    let images = read_images(open(&a.images)?)?;
    let dims = dims_by_image(&images);
    let mut count = 0u64;
    write_atomic(&a.output, |w| {
        for record in read_detections(open(&a.input)?) {
            let mut r = record?;
            let d = dims
                .get(r.image_id.as_str())
                .ok_or_else(|| Error::Validation(format!("image `{}` has no metadata", r.image_id)))?;
            r.car_probability = Some(model.apply(prior.augment_score(r.raw_score, &r.bbox, *d)));
            truncate_record(&mut r, a.topk);
            write_detection(w, &r)?;
            count += 1;
        }
        Ok(())
    })?;
    println!("records={count}");
    Ok(RunFiles {
        inputs: vec![a.input.clone(), a.images.clone(), a.prior.clone(), a.model.clone()],
        outputs: vec![a.output.clone()],
    })
}

fn eval_ap(a: &EvalApArgs) -> Result<RunFiles> {
    let (mut images, mut inputs) = load_eval_set(&a.set)?;
    if let Some(p) = &a.prior {
        let prior = load_prior(p)?;
        for im in &mut images {
            for d in &mut im.detections {
                d.score = prior.augment_score(d.score, &d.bbox, im.dims);
            }
        }
        inputs.push(p.clone());
    }
    let ap = average_precision(&images, a.set.iou)?;
    let text = format!("ap={ap:.6}\niou={}\n", a.set.iou);
    print!("{text}");
    let outputs = write_report(a.output.as_deref(), &text)?;
    Ok(RunFiles { inputs, outputs })
}

fn write_report(path: Option<&Path>, text: &str) -> Result<Vec<PathBuf>> {
    match path {
        Some(p) => {
            write_atomic(p, |w| Ok(w.write_all(text.as_bytes())?))?;
            Ok(vec![p.to_path_buf()])
        }
        None => Ok(vec![]),
    }
}

fn region_value(r: &RegionStats, name: &str) -> Result<Option<f64>> {
    Ok(match name {
        "avg_price" => r.avg_price,
        "avg_mpg" => r.avg_mpg,
        "pct_foreign" => r.pct_foreign,
        "cars_per_image" => Some(r.cars_per_image),
        "total_expected_cars" => Some(r.total_expected_cars),
        other => {
            if let Some(make) = other.strip_prefix("make:") {
                (r.class_mass > 0.0).then(|| r.make_share(make))
            } else if let Some(body) = other.strip_prefix("body:") {
                let b: BodyType = body.parse()?;
                (r.class_mass > 0.0).then(|| r.body_share(b))
            } else {
                return Err(Error::arg(format!("unknown region column `{other}`")));
            }
        }
    })
}

fn aggregate(a: &AggregateArgs) -> Result<RunFiles> {
    check_topk(a.topk)?;
    if a.points_output.is_some() && a.by != Grouping::Point {
        return Err(Error::arg("--points-output requires --by point"));
    }
    let table: ClassTable = load_taxonomy(open(&a.taxonomy)?)?;
    let images = read_images(open(&a.images)?)?;
    let mut agg =
        Aggregator::new(&table, &images, a.by).with_options(ExpectationOptions { renormalize: a.renormalize });
    let topk = a.topk;
    let groups = read_detections(open(&a.input)?).validate_against(&table).by_image().map(|g| {
        g.map(|(id, mut recs)| {
            recs.iter_mut().for_each(|r| truncate_record(r, topk));
            (id, recs)
        })
    });
    agg.consume(groups, 4096)?;
    let rollup = agg.finish()?;
    if let Some(u) = &rollup.unassigned {
        log::warn!("{} images in the detection file have no metadata", u.image_count);
    }
    write_atomic(&a.output, |w| write_region_table(w, &rollup.regions, &table))?;
    let mut outputs = vec![a.output.clone()];
    if let Some(p) = &a.points_output {
        region_value(&rollup.regions[0], &a.value)?;
        write_atomic(p, |w| write_point_table(w, &rollup.regions, |r| region_value(r, &a.value).ok().flatten()))?;
        outputs.push(p.clone());
    }
    println!("regions={}", rollup.regions.len());
    Ok(RunFiles { inputs: vec![a.input.clone(), a.images.clone(), a.taxonomy.clone()], outputs })
}

fn moran(a: &MoranArgs) -> Result<RunFiles> {
    let pattern = read_point_pattern(open(&a.input)?)?;
    let mut w = build_weights(&pattern, a.weights)?;
    if a.row_standardize {
        w = w.row_standardize();
    }
    let t = morans_i_significance(&pattern, &w, a.permutations, a.seed)?;
    let text = format!(
        "n={}\nweights={}\nrow_standardized={}\nmoran_i={}\nexpected={}\np_value={}\npermutations={}\n",
        pattern.len(),
        a.weights,
        a.row_standardize,
        t.observed,
        t.expected,
        t.p_value,
        t.permutations
    );
    print!("{text}");
    let outputs = write_report(a.output.as_deref(), &text)?;
    Ok(RunFiles { inputs: vec![a.input.clone()], outputs })
}

fn gistar(a: &GistarArgs) -> Result<RunFiles> {
    let pattern = read_point_pattern(open(&a.input)?)?;
    let w = build_weights(&pattern, a.weights)?;
    let z = getis_ord_gistar(&pattern, &w)?;
    let labels = classify_clusters(&z, a.hot, a.cold)?;
    write_atomic(&a.output, |out| write_gistar_table(out, &pattern, &z, &labels))?;
    let count = |l: ClusterLabel| labels.iter().filter(|x| **x == l).count();
    println!(
        "points={} hot={} cold={} none={}",
        labels.len(),
        count(ClusterLabel::Hot),
        count(ClusterLabel::Cold),
        count(ClusterLabel::None)
    );
    Ok(RunFiles { inputs: vec![a.input.clone()], outputs: vec![a.output.clone()] })
}

fn features(a: &FeaturesArgs) -> Result<RunFiles> {
    let regions = read_region_table(open(&a.input)?)?;
    let schema = match &a.makes {
        Some(list) => FeatureSchema::new(list.split(',').map(|s| s.trim().to_string()).collect())?,
        None => FeatureSchema::default(),
    };
    let table = FeatureTable::from_regions(&regions, &schema)?;
    write_atomic(&a.output, |w| table.write_csv(w))?;
    println!("regions={} dim={}", table.len(), schema.dim());
    Ok(RunFiles { inputs: vec![a.input.clone()], outputs: vec![a.output.clone()] })
}

/// Model file: ridge weights plus the split that produced them.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    target: Target,
    train_regions: Vec<String>,
    model: RidgeModel,
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let m: ModelFile = read_json(path)?;
    m.model.validate()?;
    Ok(m)
}

fn check_names(model: &RidgeModel, table: &FeatureTable) -> Result<()> {
    if !model.feature_names.is_empty() && model.feature_names != table.names {
        return Err(Error::Validation("feature table columns differ from the model's schema".into()));
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<RunFiles> {
    let table = FeatureTable::read_csv(open(&a.input)?)?;
    let truth = read_ground_truth(open(&a.truth)?)?;
    let joined = join_target(&table, &truth, a.target);
    let (train_idx, _) = train_test_split(joined.len(), a.train_fraction, a.seed)?;
    let x: Vec<Vec<f64>> = train_idx.iter().map(|&k| table.rows[joined[k].0].clone()).collect();
    let y: Vec<f64> = train_idx.iter().map(|&k| joined[k].1).collect();
    let grid = match &a.lambda_grid {
        Some(g) => parse_list(g)?,
        None => default_lambda_grid(),
    };
    let lambda = select_lambda(&x, &y, &grid, a.folds.min(x.len()), derive_seed(a.seed, 1))?;
    let model = fit_ridge(&x, &y, lambda)?.with_feature_names(table.names.clone())?;
    let file = ModelFile {
        target: a.target,
        train_regions: train_idx.iter().map(|&k| table.regions[joined[k].0].clone()).collect(),
        model,
    };
    write_json_atomic(&a.output, &file)?;
    println!("train={} lambda={lambda} dropped={}", x.len(), file.model.dropped.len());
    Ok(RunFiles { inputs: vec![a.input.clone(), a.truth.clone()], outputs: vec![a.output.clone()] })
}

fn predict(a: &PredictArgs) -> Result<RunFiles> {
    let m = load_model(&a.model)?;
    let table = FeatureTable::read_csv(open(&a.input)?)?;
    check_names(&m.model, &table)?;
    write_atomic(&a.output, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["region", "prediction"])?;
        for (region, row) in table.regions.iter().zip(&table.rows) {
            csv.write_record([region.as_str(), &m.model.predict(row)?.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    println!("regions={}", table.len());
    Ok(RunFiles { inputs: vec![a.model.clone(), a.input.clone()], outputs: vec![a.output.clone()] })
}

fn evaluate(a: &EvaluateArgs) -> Result<RunFiles> {
    let m = load_model(&a.model)?;
    let table = FeatureTable::read_csv(open(&a.input)?)?;
    check_names(&m.model, &table)?;
    let truth: Vec<GroundTruthRow> = read_ground_truth(open(&a.truth)?)?;
    let trained: HashSet<&str> = m.train_regions.iter().map(String::as_str).collect();
    let held_out: Vec<(usize, f64)> = join_target(&table, &truth, m.target)
        .into_iter()
        .filter(|(i, _)| !trained.contains(table.regions[*i].as_str()))
        .collect();
    let predicted = held_out.iter().map(|(i, _)| m.model.predict(&table.rows[*i])).collect::<Result<Vec<_>>>()?;
    let actual: Vec<f64> = held_out.iter().map(|h| h.1).collect();
    let r = pearson_r(&predicted, &actual)?;
    let mut text = format!("held_out={}\nregion_r={r}\n", held_out.len());
    let mut inputs = vec![a.model.clone(), a.input.clone(), a.truth.clone()];
    if let Some(path) = &a.images {
        let images = read_images(open(path)?)?;
        let city_of: HashMap<&str, &str> =
            images.iter().map(|im| (im.zip_code.as_str(), im.city_id.as_str())).collect();
        let city_truth: HashMap<&str, f64> =
            truth.iter().filter_map(|g| m.target.value(g).map(|v| (g.region.as_str(), v))).collect();
        // held-out zips per city, in city order
        let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (k, (i, _)) in held_out.iter().enumerate() {
            if let Some(c) = city_of.get(table.regions[*i].as_str()) {
                by_city.entry(c).or_default().push(k);
            }
        }
        let (mut cp, mut ca) = (Vec::new(), Vec::new());
        for (city, ks) in &by_city {
            let rows: Vec<&[f64]> = ks.iter().map(|&k| table.rows[held_out[k].0].as_slice()).collect();
            let weights: Vec<u64> = ks.iter().map(|&k| table.image_counts[held_out[k].0]).collect();
            cp.push(m.model.predict(&weighted_mean_features(&rows, &weights)?)?);
            // city rows in the truth table win over the image-weighted zip mean
            ca.push(match city_truth.get(city) {
                Some(v) => *v,
                None => {
                    let total: u64 = weights.iter().sum();
                    ks.iter().zip(&weights).map(|(&k, &w)| held_out[k].1 * w as f64).sum::<f64>() / total as f64
                }
            });
        }
        text.push_str(&format!("cities={}\n", cp.len()));
        if cp.len() >= 3 {
            text.push_str(&format!("city_r={}\n", pearson_r(&cp, &ca)?));
        }
        inputs.push(path.clone());
    }
    print!("{text}");
    let outputs = write_report(a.output.as_deref(), &text)?;
    Ok(RunFiles { inputs, outputs })
}

fn correlate(a: &CorrelateArgs) -> Result<RunFiles> {
    let table = FeatureTable::read_csv(open(&a.input)?)?;
    let truth = read_ground_truth(open(&a.truth)?)?;
    let joined = join_target(&table, &truth, a.target);
    let rows: Vec<Vec<f64>> = joined.iter().map(|(i, _)| table.rows[*i].clone()).collect();
    let target: Vec<f64> = joined.iter().map(|j| j.1).collect();
    let out = correlate_attributes(&table.names, &rows, &target)?;
    write_atomic(&a.output, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["feature", "r", "p_value"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &out {
            csv.write_record([c.name.clone(), fmt(c.r), fmt(c.p_value)])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    for c in crate::demographics::top_by_abs(&out, 5) {
        println!("{} r={:.4}", c.name, c.r.unwrap_or(f64::NAN));
    }
    Ok(RunFiles { inputs: vec![a.input.clone(), a.truth.clone()], outputs: vec![a.output.clone()] })
}

fn fit_res_hist(a: &FitResHistArgs) -> Result<RunFiles> {
    let truths: Vec<TruthBox> = read_truth_boxes(open(&a.input)?)?;
    let boxes: Vec<_> = truths.iter().map(TruthBox::bbox).collect();
    let hist = fit_resolution_hist(&boxes, a.bins)?;
    write_json_atomic(&a.output, &hist)?;
    println!("boxes={} bins={}", boxes.len(), hist.len());
    Ok(RunFiles { inputs: vec![a.input.clone()], outputs: vec![a.output.clone()] })
}

fn fit_iou_hist_cmd(a: &FitIouHistArgs) -> Result<RunFiles> {
    let (images, inputs) = load_eval_set(&a.set)?;
    let hist = fit_iou_hist(&images, a.set.iou, a.bins)?;
    write_json_atomic(&a.output, &hist)?;
    println!("bins={}", hist.len());
    Ok(RunFiles { inputs, outputs: vec![a.output.clone()] })
}

fn sample_crops(a: &SampleCropsArgs) -> Result<RunFiles> {
    let hist: Histogram = read_json(&a.hist)?;
    hist.validate()?;
    let images = read_images(open(&a.images)?)?;
    let dims = dims_by_image(&images);
    let truths = read_truth_boxes(open(&a.input)?)?;
    write_atomic(&a.output, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["image_id", "x_center", "y_center", "width", "height", "iou"])?;
        for (i, t) in truths.iter().enumerate() {
            let d = dims
                .get(t.image_id.as_str())
                .ok_or_else(|| Error::Validation(format!("image `{}` has no metadata", t.image_id)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, i as u64));
            let truth = t.bbox();
            let c = sample_crop(&truth, *d, &hist, &mut rng)?;
            csv.write_record([
                t.image_id.clone(),
                c.x_center.to_string(),
                c.y_center.to_string(),
                c.width.to_string(),
                c.height.to_string(),
                iou(&c, &truth).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    println!("crops={}", truths.len());
    Ok(RunFiles { inputs: vec![a.input.clone(), a.images.clone(), a.hist.clone()], outputs: vec![a.output.clone()] })
}

fn demo_cmd(a: &DemoArgs) -> Result<RunFiles> {
    let mut config = DemoConfig::new(a.seed);
    config.city.zips = a.zips;
    config.city.images_per_zip = a.images_per_zip;
    config.moran_permutations = a.permutations;
    let report = demo(&config)?;
    println!("{report}");
    let mut outputs = vec![];
    if let Some(p) = &a.output {
        write_json_atomic(p, &report)?;
        outputs.push(p.clone());
    }
    Ok(RunFiles { inputs: vec![], outputs })
}
