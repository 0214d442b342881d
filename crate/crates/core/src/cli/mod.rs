//! Command-line front end.
//!
//! Every subcommand writes its outputs atomically and leaves a
//! `<output>.manifest.json` with input and output digests. Failures print one
//! `error kind=<kind> message="<text>"` line; usage errors exit 2 and domain
//! errors exit 1.

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::census::Grouping;
use crate::demographics::Target;
use crate::error::{Error, Result};
use crate::spatial::WeightScheme;
use output::{manifest_path, write_json_atomic, FileDigest, PipelineManifest};

#[derive(Debug, Parser)]
#[command(name = "carcensus", version, about = "Visual census estimation from car detections")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic city into a directory.
    Synth(SynthArgs),
    /// Fit the location/size prior from truth boxes.
    FitPrior(FitPriorArgs),
    /// Choose the prior weight alpha by validation AP.
    LearnAlpha(LearnAlphaArgs),
    /// Fit the isotonic score-to-probability map.
    FitCalibration(FitCalibrationArgs),
    /// Attach calibrated car probabilities to a detection file.
    Calibrate(CalibrateArgs),
    /// Average precision of raw or augmented scores.
    EvalAp(EvalApArgs),
    /// Roll detections up into region statistics.
    Aggregate(AggregateArgs),
    /// Global Moran's I with a permutation p-value.
    Moran(MoranArgs),
    /// Getis-Ord Gi* z-scores and cluster labels.
    Gistar(GistarArgs),
    /// Region feature vectors from a region table.
    Features(FeaturesArgs),
    /// Fit a ridge model on a seeded training split.
    Train(TrainArgs),
    /// Apply a ridge model to feature rows.
    Predict(PredictArgs),
    /// Held-out correlation of a model at region and city level.
    Evaluate(EvaluateArgs),
    /// Per-feature correlation with a ground-truth column.
    Correlate(CorrelateArgs),
    /// Fit the box resolution histogram.
    FitResHist(FitResHistArgs),
    /// Fit the detection/truth IOU histogram.
    FitIouHist(FitIouHistArgs),
    /// Sample IOU-matched crops around truth boxes.
    SampleCrops(SampleCropsArgs),
    /// Run the synthetic end-to-end pipeline.
    Demo(DemoArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub zips: usize,
    #[arg(long, default_value_t = 120)]
    pub images_per_zip: usize,
    #[arg(long, default_value_t = 240)]
    pub classes: usize,
    /// Box placement.
    #[arg(long, default_value = "planted", value_parser = ["planted", "uniform"])]
    pub placement: String,
    /// Detector noise preset.
    #[arg(long, default_value = "moderate", value_parser = ["low", "moderate", "high"])]
    pub noise: String,
    #[arg(long, default_value_t = 2.0)]
    pub coupling: f64,
    /// Spread incomes randomly instead of smoothly across the zip grid.
    #[arg(long)]
    pub unsegregated: bool,
    #[arg(long, default_value_t = 20)]
    pub topk: usize,
    #[arg(long, default_value = "synth-city")]
    pub city: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FitPriorArgs {
    /// Truth box table.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalSet {
    /// Detection file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub truths: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct LearnAlphaArgs {
    #[command(flatten)]
    pub set: EvalSet,
    #[arg(long)]
    pub prior: PathBuf,
    /// Comma-separated alpha grid (default 0, 0.1, ..., 2).
    #[arg(long)]
    pub alpha_grid: Option<String>,
    /// Prior file with the learned alpha.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCalibrationArgs {
    #[command(flatten)]
    pub set: EvalSet,
    #[arg(long)]
    pub prior: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub prior: PathBuf,
    /// Isotonic model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep only the k most probable classes per box.
    #[arg(long, default_value_t = 20)]
    pub topk: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalApArgs {
    #[command(flatten)]
    pub set: EvalSet,
    /// Score with the prior's augmentation instead of raw scores.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// Calibrated detection file, sorted by image id.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// city, zip or point.
    #[arg(long, default_value = "zip")]
    pub by: Grouping,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write a `lat,lon,value` table (requires --by point).
    #[arg(long)]
    pub points_output: Option<PathBuf>,
    /// Region column used for --points-output.
    #[arg(long, default_value = "avg_price")]
    pub value: String,
    /// Rescale truncated class distributions to sum to one.
    #[arg(long)]
    pub renormalize: bool,
    #[arg(long, default_value_t = 20)]
    pub topk: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MoranArgs {
    /// Point table with lat, lon, value columns.
    #[arg(long)]
    pub input: PathBuf,
    /// inverse-sq or band:<meters>.
    #[arg(long, default_value = "inverse-sq")]
    pub weights: WeightScheme,
    #[arg(long)]
    pub row_standardize: bool,
    #[arg(long, default_value_t = 999)]
    pub permutations: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GistarArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "inverse-sq")]
    pub weights: WeightScheme,
    #[arg(long, default_value_t = 1.96)]
    pub hot: f64,
    #[arg(long, default_value_t = -1.96, allow_hyphen_values = true)]
    pub cold: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    /// Region table from `aggregate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated make list (default: the built-in 71-make catalog).
    #[arg(long)]
    pub makes: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Feature table.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth table.
    #[arg(long)]
    pub truth: PathBuf,
    /// income, burglary or crime.
    #[arg(long, default_value = "income")]
    pub target: Target,
    /// Comma-separated lambda grid.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.18)]
    pub train_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Image metadata; enables city-level evaluation.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "income")]
    pub target: Target,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitResHistArgs {
    /// Truth box table.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 35)]
    pub bins: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitIouHistArgs {
    #[command(flatten)]
    pub set: EvalSet,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleCropsArgs {
    /// Truth box table.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// IOU histogram file.
    #[arg(long)]
    pub hist: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub zips: usize,
    #[arg(long, default_value_t = 120)]
    pub images_per_zip: usize,
    #[arg(long, default_value_t = 999)]
    pub permutations: usize,
    /// JSON report path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::FitPrior(_) => "fit-prior",
            Command::LearnAlpha(_) => "learn-alpha",
            Command::FitCalibration(_) => "fit-calibration",
            Command::Calibrate(_) => "calibrate",
            Command::EvalAp(_) => "eval-ap",
            Command::Aggregate(_) => "aggregate",
            Command::Moran(_) => "moran",
            Command::Gistar(_) => "gistar",
            Command::Features(_) => "features",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Correlate(_) => "correlate",
            Command::FitResHist(_) => "fit-res-hist",
            Command::FitIouHist(_) => "fit-iou-hist",
            Command::SampleCrops(_) => "sample-crops",
            Command::Demo(_) => "demo",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Moran(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::SampleCrops(a) => Some(a.seed),
            Command::Demo(a) => Some(a.seed),
            _ => None,
        }
    }
}

/// Files a command read and wrote.
#[derive(Debug, Default)]
pub struct RunFiles {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// Formats an error as a single `key=value` line.
pub fn error_line(e: &Error) -> String {
    let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={} message=\"{}\"", e.kind(), message)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// Runs a parsed command, writing a manifest next to every output.
pub fn execute(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let files = match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| commands::dispatch(&cli.command))?
        }
        None => commands::dispatch(&cli.command)?,
    };
    let config = serde_json::to_value(&cli.command)?;
    let inputs = files.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::new();
    for p in &files.outputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.file_name().is_some_and(|n| n != "manifest.json"))
                .collect();
            entries.sort();
            for f in entries {
                outputs.push(FileDigest::of(&f)?);
            }
        } else {
            outputs.push(FileDigest::of(p)?);
        }
    }
    let manifest = PipelineManifest {
        command: cli.command.name().to_string(),
        config,
        seed: cli.command.seed(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        outputs,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    for p in &files.outputs {
        write_json_atomic(&manifest_path(p), &manifest)?;
    }
    Ok(())
}
