//! The `lawnmeter` command line.
//!
//! Exit codes: 0 on success, 1 when training diverges, 2 for usage, input
//! and I/O errors.

mod bench;
mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;

pub use bench::{run_bench, BenchConfig, BenchOutcome};
pub use config::{config_args, expand_args, CONFIG_ENV};

use crate::dataset::{
    generate_augmented_dataset, load_manifest, save_manifest, split_dataset, write_synthetic_dataset, AugmentParams,
    Manifest, ManifestRecord, SceneConfig, SplitSpec,
};
use crate::imaging::{preprocess, read_pnm, write_pnm, Method, PreprocessParams};
use crate::metrics::{build_report, evaluate_pipeline, read_results, report_csv, Split};
use crate::neuralnet::{dump_activations, Architecture};
use crate::training::{
    load_checkpoint, save_checkpoint, stack, train_with_progress, Checkpoint, InputPipeline, LrSchedule, Optimizer,
    Pipeline, TrainConfig,
};
use crate::tuning::{grid_search, results_csv, ParamGrid, SearchConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "lawnmeter", version, about = "Lawn area regression from aerial images")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (0 = one per core). Never changes any output.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// key=value settings file; command-line flags win over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic lawn scenes with exact area labels.
    Synth(SynthArgs),
    /// Write seeded augmented copies of every record.
    Augment(AugmentArgs),
    /// Split a manifest into train.csv, val.csv and test.csv beside it.
    Split(SplitArgs),
    /// Apply one preprocessing operator to every image.
    Preprocess(PreprocessArgs),
    /// Train one pipeline and write a checkpoint plus history CSV.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Combine evaluation CSVs into the comparison table.
    Report(ReportArgs),
    /// k-fold cross-validated grid search.
    Gridsearch(GridArgs),
    /// Dump one activation grid per convolution layer.
    Activations(ActivationArgs),
    /// Run the full four-pipeline comparison end to end.
    Bench(BenchArgs),
}

const SUBCOMMANDS: [&str; 10] = [
    "synth",
    "augment",
    "split",
    "preprocess",
    "train",
    "eval",
    "report",
    "gridsearch",
    "activations",
    "bench",
];

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0.25)]
    pub meters_per_pixel: f64,
    #[arg(long, default_value_t = 0.05)]
    pub house_min: f64,
    #[arg(long, default_value_t = 0.40)]
    pub house_max: f64,
    #[arg(long, default_value_t = 0)]
    pub trees_min: u32,
    #[arg(long, default_value_t = 5)]
    pub trees_max: u32,
}

impl SceneArgs {
    fn scene(&self, seed: u64) -> SceneConfig {
        SceneConfig {
            size: self.size,
            meters_per_pixel: self.meters_per_pixel,
            house_fraction: (self.house_min, self.house_max),
            tree_count: (self.trees_min, self.trees_max),
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 65)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Debug, Args)]
pub struct AugmentOptions {
    /// Augmented copies per original.
    #[arg(long, default_value_t = 50)]
    pub copies: usize,
    /// Largest rotation in degrees, either direction.
    #[arg(long, default_value_t = 20.0)]
    pub rotation: f64,
    #[arg(long)]
    pub no_hflip: bool,
    #[arg(long)]
    pub no_vflip: bool,
    #[arg(long, default_value_t = 0.8)]
    pub brightness_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub brightness_max: f64,
}

impl AugmentOptions {
    fn params(&self) -> AugmentParams {
        AugmentParams {
            rotation_max_deg: self.rotation,
            flip_horizontal: !self.no_hflip,
            flip_vertical: !self.no_vflip,
            brightness: (self.brightness_min, self.brightness_max),
            copies: self.copies,
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Source manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub options: AugmentOptions,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, num_args = 3, default_values_t = [0.70, 0.15, 0.15])]
    pub ratios: Vec<f64>,
    /// Split individual records instead of whole origins.
    #[arg(long)]
    pub by_record: bool,
    /// Exact record counts 1849/150/250 split by record, ignoring origins.
    #[arg(long, conflicts_with_all = ["by_record", "counts"])]
    pub legacy_split: bool,
    /// Exact unit counts overriding the ratios.
    #[arg(long, num_args = 3)]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// none, threshold, contour or canny.
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed threshold instead of Otsu's.
    #[arg(long)]
    pub threshold: Option<u8>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    pub base_filters: usize,
    #[arg(long, num_args = 2, default_values_t = [256, 64])]
    pub dense: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

impl ModelArgs {
    fn arch(&self) -> Architecture {
        Architecture {
            base_filters: self.base_filters,
            dense_units: [self.dense[0], self.dense[1]],
            dropout: self.dropout,
            l2_lambda: self.l2,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainOptions {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// adam or sgd.
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// constant or cosine (decays towards zero over the run).
    #[arg(long, default_value = "constant")]
    pub lr_schedule: String,
    /// Momentum for sgd.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Train on standardized areas rather than raw square meters.
    #[arg(long)]
    pub standardize: bool,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 15)]
    pub patience: usize,
}

impl TrainOptions {
    fn config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::adam(),
            "sgd" => Optimizer::Sgd {
                momentum: self.momentum,
            },
            other => {
                return Err(Error::invalid(format!(
                    "--optimizer: expected adam or sgd, got {other:?}"
                )))
            }
        };
        let lr_schedule = match self.lr_schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine,
            other => {
                return Err(Error::invalid(format!(
                    "--lr-schedule: expected constant or cosine, got {other:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer,
            learning_rate: self.lr,
            lr_schedule,
            seed: self.seed,
            shuffle: !self.no_shuffle,
            target_standardize: self.standardize,
            early_stop_patience: (self.patience > 0).then_some(self.patience),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cnn, threshold, contour or edges.
    #[arg(long, default_value = "cnn")]
    pub pipeline: Pipeline,
    /// Training manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation manifest for early stopping and the history CSV.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, default_value = "model.lawn")]
    pub out: PathBuf,
    /// History CSV; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// training, validation or testing.
    #[arg(long, default_value = "testing")]
    pub split: Split,
    /// Also write the row as a results CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// key=v1,v2 file; axes it omits stay at the model defaults.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "cnn")]
    pub pipeline: Pipeline,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Epochs per fold.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fold whole origins rather than records.
    #[arg(long)]
    pub by_origin: bool,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value = "grid.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ActivationArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run the checkpoint's preprocessing on the image first.
    #[arg(long)]
    pub apply_pipeline: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 65)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub meters_per_pixel: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub copies: usize,
    #[arg(long, default_value_t = 16)]
    pub base_filters: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Subset of pipelines to run.
    #[arg(long, num_args = 1.., default_values_t = Pipeline::ALL)]
    pub pipelines: Vec<Pipeline>,
    #[arg(long)]
    pub quiet: bool,
}

/// Parses `args` (program name first), honoring `--config` and the
/// environment, and runs the command. Returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_args(args, &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::invalid(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Augment(a) => cmd_augment(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Gridsearch(a) => cmd_gridsearch(&a),
        Command::Activations(a) => cmd_activations(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let m = write_synthetic_dataset(&a.scene.scene(a.seed), a.count, &a.out)?;
    println!("wrote {} scenes to {}", m.len(), a.out.display());
    Ok(())
}

fn cmd_augment(a: &AugmentArgs) -> Result<()> {
    let src = load_manifest(&a.data)?;
    let m = generate_augmented_dataset(&src, &a.options.params(), a.seed, &a.out)?;
    save_manifest(&m, a.out.join("manifest.csv"))?;
    println!("wrote {} records to {}", m.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let src = load_manifest(&a.data)?;
    let spec = SplitSpec {
        ratios: [a.ratios[0], a.ratios[1], a.ratios[2]],
        by_original: !(a.by_record || a.legacy_split),
        seed: a.seed,
        counts: if a.legacy_split {
            Some([1849, 150, 250])
        } else {
            a.counts.as_ref().map(|c| [c[0], c[1], c[2]])
        },
    };
    let s = split_dataset(&src, &spec)?;
    let dir = a.data.parent().unwrap_or(Path::new(""));
    for (name, m) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        let path = dir.join(format!("{name}.csv"));
        save_manifest(m, &path)?;
        println!("{name}: {} records -> {}", m.len(), path.display());
    }
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let src = load_manifest(&a.data)?;
    let params = PreprocessParams {
        threshold: a.threshold,
        ..Default::default()
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ext = if a.method.output_channels() == 3 { "ppm" } else { "pgm" };
    let records: Vec<ManifestRecord> = src
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let img = preprocess(&src.load_image(rec)?, a.method, &params)?;
            let stem = Path::new(&rec.image_path)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let name = format!("{i:05}_{stem}.{ext}");
            write_pnm(&img, a.out.join(&name))?;
            Ok(ManifestRecord {
                image_path: name,
                ..rec.clone()
            })
        })
        .collect::<Result<_>>()?;
    let m = Manifest::new(&a.out, records);
    save_manifest(&m, a.out.join("manifest.csv"))?;
    println!("wrote {} {} images to {}", m.len(), a.method, a.out.display());
    Ok(())
}

/// Input shape of a manifest's first image after the pipeline's operator.
fn detect_input(m: &Manifest, pipeline: Pipeline) -> Result<[usize; 3]> {
    let first = m
        .records
        .first()
        .ok_or_else(|| Error::invalid("manifest has no records"))?;
    let img = m.load_image(first)?;
    Ok([img.height(), img.width(), pipeline.input_channels()])
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.train.config()?;
    let train_m = load_manifest(&a.data)?;
    let val_m = a.val.as_ref().map(load_manifest).transpose()?;
    let input = InputPipeline::new(a.pipeline);
    let spec = a.model.arch().build(detect_input(&train_m, a.pipeline)?)?;
    let mut progress = |e: &crate::training::EpochRecord| match e.val_mse {
        Some(v) => eprintln!("epoch {:>4}: train {:.3} val {:.3}", e.epoch, e.train_mse, v),
        None => eprintln!("epoch {:>4}: train {:.3}", e.epoch, e.train_mse),
    };
    let out = train_with_progress(&spec, &train_m, val_m.as_ref(), &cfg, &input, &mut progress)?;
    let history = a.history.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&history, &out.history.to_csv())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ck = Checkpoint {
        model: out.model,
        config: cfg,
        optimizer: out.optimizer,
    };
    save_checkpoint(&ck, &a.out)?;
    println!("checkpoint {} history {}", a.out.display(), history.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let m = load_manifest(&a.data)?;
    let r = evaluate_pipeline(&ck.model, &m, a.split)?;
    let csv = report_csv(std::slice::from_ref(&r));
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut results = Vec::new();
    for p in &a.results {
        results.extend(read_results(p)?);
    }
    let (csv, md) = build_report(&results);
    if let Some(p) = &a.csv {
        write_text(p, &csv)?;
    }
    if let Some(p) = &a.markdown {
        write_text(p, &md)?;
    }
    print!("{md}");
    Ok(())
}

fn cmd_gridsearch(a: &GridArgs) -> Result<()> {
    let m = load_manifest(&a.data)?;
    let arch = a.model.arch();
    let train = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        target_standardize: a.standardize,
        early_stop_patience: None,
        ..Default::default()
    };
    train.validate()?;
    let mut grid = ParamGrid::single(&arch, &train);
    if let Some(p) = &a.grid {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        grid = grid.parse_into(&text, p)?;
    }
    let input = detect_input(&m, a.pipeline)?;
    let cfg = SearchConfig {
        k: a.k,
        seed: a.seed,
        epochs: a.epochs,
        by_origin: a.by_origin,
        arch,
        train,
        input: InputPipeline::new(a.pipeline),
        image_size: [input[0], input[1]],
    };
    let (best, results) = grid_search(&grid, &m, &cfg)?;
    write_text(&a.out, &results_csv(&results))?;
    println!(
        "best: learning_rate={} dropout_rate={} l2_lambda={} base_filters={}",
        best.learning_rate, best.dropout_rate, best.l2_lambda, best.base_filters
    );
    Ok(())
}

fn cmd_activations(a: &ActivationArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let mut img = read_pnm(&a.image)?;
    if a.apply_pipeline {
        img = preprocess(&img, model.input.pipeline.method(), &model.input.preprocess)?;
    }
    let want = model.spec.input;
    let got = [img.height(), img.width(), img.channels()];
    if got != want {
        return Err(Error::shape(format!(
            "{}: image is {}x{}x{} but the checkpoint expects {}x{}x{}",
            a.image.display(),
            got[0],
            got[1],
            got[2],
            want[0],
            want[1],
            want[2]
        )));
    }
    let x = stack(&[img], want);
    for p in dump_activations(&model.spec, &model.params, &x, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = BenchConfig::new(&a.out);
    cfg.count = a.count;
    cfg.seed = a.seed;
    cfg.scene.seed = a.seed;
    cfg.scene.size = a.size;
    cfg.scene.meters_per_pixel = a.meters_per_pixel;
    cfg.augment.copies = a.copies;
    cfg.split.seed = a.seed;
    cfg.arch.base_filters = a.base_filters;
    cfg.train.epochs = a.epochs;
    cfg.train.seed = a.seed;
    cfg.train.batch_size = a.batch_size;
    cfg.train.learning_rate = a.lr;
    cfg.train.validate()?;
    cfg.pipelines = a.pipelines.clone();
    let quiet = a.quiet;
    let out = run_bench(&cfg, &mut |line| {
        if !quiet {
            eprintln!("{line}")
        }
    })?;
    print!(
        "{}",
        fs::read_to_string(&out.report_markdown).map_err(|e| Error::io(&out.report_markdown, e))?
    );
    Ok(())
}
