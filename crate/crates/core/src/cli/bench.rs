//! The end-to-end comparison: synthesize scenes, augment, split by origin,
//! train one network per pipeline and report every split.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{
    generate_augmented_dataset, save_manifest, split_dataset, write_synthetic_dataset, AugmentParams, SceneConfig,
    SplitSpec,
};
use crate::metrics::{build_report, evaluate_pipeline, EvalResult, Split};
use crate::neuralnet::Architecture;
use crate::training::{save_checkpoint, train_with_progress, Checkpoint, InputPipeline, Pipeline, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub augment: AugmentParams,
    pub split: SplitSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub pipelines: Vec<Pipeline>,
}

impl BenchConfig {
    /// 65 scenes at 64x64, 50 augmented copies each, a 70/15/15 origin
    /// split and 50 epochs per pipeline.
    pub fn new(out: impl Into<PathBuf>) -> Self {
        let seed = 7;
        BenchConfig {
            out: out.into(),
            count: 65,
            seed,
            scene: SceneConfig {
                size: 64,
                meters_per_pixel: 0.5,
                seed,
                ..Default::default()
            },
            augment: AugmentParams::default(),
            split: SplitSpec {
                seed,
                ..Default::default()
            },
            arch: Architecture {
                base_filters: 16,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 50,
                seed,
                target_standardize: true,
                ..Default::default()
            },
            pipelines: Pipeline::ALL.to_vec(),
        }
    }
}

pub struct BenchOutcome {
    pub results: Vec<EvalResult>,
    pub report_csv: PathBuf,
    pub report_markdown: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the comparison, writing every intermediate artifact under
/// `cfg.out`. Progress goes to `log`.
pub fn run_bench(cfg: &BenchConfig, log: &mut dyn FnMut(&str)) -> Result<BenchOutcome> {
    let started = Instant::now();
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let originals = write_synthetic_dataset(&cfg.scene, cfg.count, out.join("originals"))?;
    log(&format!("synthesized {} scenes", originals.len()));
    let augmented = generate_augmented_dataset(&originals, &cfg.augment, cfg.seed, out.join("augmented"))?;
    save_manifest(&augmented, out.join("augmented").join("manifest.csv"))?;
    let splits = split_dataset(&augmented, &cfg.split)?;
    for (name, m) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        save_manifest(m, out.join("augmented").join(format!("{name}.csv")))?;
    }
    log(&format!(
        "augmented to {} records; split {}/{}/{}",
        augmented.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    ));

    let size = cfg.scene.size;
    let mut results = Vec::new();
    for &pipeline in &cfg.pipelines {
        let spec = cfg.arch.build([size, size, pipeline.input_channels()])?;
        let input = InputPipeline::new(pipeline);
        let mut progress = |e: &crate::training::EpochRecord| {
            log(&format!(
                "{pipeline} epoch {:>3}: train {:.2} val {:.2} ({:.1}s)",
                e.epoch,
                e.train_mse,
                e.val_mse.unwrap_or(f64::NAN),
                e.wall_seconds
            ))
        };
        let outcome = train_with_progress(
            &spec,
            &splits.train,
            Some(&splits.val),
            &cfg.train,
            &input,
            &mut progress,
        )?;
        write(&out.join(format!("history_{pipeline}.csv")), &outcome.history.to_csv())?;
        for (split, m) in [
            (Split::Training, &splits.train),
            (Split::Validation, &splits.val),
            (Split::Testing, &splits.test),
        ] {
            let r = evaluate_pipeline(&outcome.model, m, split)?;
            log(&format!(
                "{pipeline} {split}: mse {:.2} accuracy {:.4}",
                r.mse, r.accuracy_mean
            ));
            results.push(r);
        }
        let ck = Checkpoint {
            model: outcome.model,
            config: cfg.train.clone(),
            optimizer: outcome.optimizer,
        };
        save_checkpoint(&ck, out.join(format!("{pipeline}.lawn")))?;
    }

    let (csv, md) = build_report(&results);
    let report_csv = out.join("report.csv");
    let report_markdown = out.join("report.md");
    write(&report_csv, &csv)?;
    write(&report_markdown, &md)?;
    log(&format!("done in {:.1}s", started.elapsed().as_secs_f64()));
    Ok(BenchOutcome {
        results,
        report_csv,
        report_markdown,
    })
}
