use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{optimizer_step, InputPipeline, Optimizer, OptimizerState, TargetScale};
use crate::dataset::Manifest;
use crate::neuralnet::{
    init_parameters, l2_penalty, model_backward, model_forward, mse_loss, Mode, ModelSpec, Parameters, Tensor,
};
use crate::{seed, Error, Result};

/// Learning rate as a function of the epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate at the first epoch towards zero after
    /// the last.
    Cosine,
}

impl LrSchedule {
    /// Rate for the 1-based `epoch` out of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let progress = (epoch - 1) as f64 / epochs as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Batch size used for inference passes.
const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub shuffle: bool,
    /// Train on standardized areas instead of raw square meters.
    pub target_standardize: bool,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            optimizer: Optimizer::adam(),
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            shuffle: true,
            target_standardize: false,
            early_stop_patience: Some(15),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, without the L2
    /// term, in squared square meters.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when validation guided the
    /// choice.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// `epoch,train_mse,val_mse`, one row per epoch. Wall time is left out
    /// so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{}", e.epoch, e.train_mse, val).expect("string write");
        }
        s
    }
}

/// A network together with everything needed to turn records into areas.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub target: TargetScale,
    pub input: InputPipeline,
}

impl TrainedModel {
    /// Predicted areas for every record, in order.
    pub fn predict(&self, manifest: &Manifest) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..manifest.len()).collect();
        let mut out = Vec::with_capacity(manifest.len());
        for chunk in idx.chunks(EVAL_BATCH) {
            let x = self.input.load_batch(manifest, chunk, self.spec.input)?;
            out.extend(self.predict_tensor(&x)?);
        }
        Ok(out)
    }

    /// Predicted areas for an already prepared `[N, H, W, C]` batch.
    pub fn predict_tensor(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (pred, _) = model_forward(&self.spec, &self.params, x, Mode::Infer, false)?;
        Ok(pred.data().iter().map(|&y| self.target.decode(y as f64)).collect())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
}

fn mse(preds: &[f64], targets: &[f64]) -> f64 {
    preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64
}

/// Trains from fresh parameters; see [`train_with_progress`].
pub fn train(
    spec: &ModelSpec,
    train_set: &Manifest,
    val_set: Option<&Manifest>,
    cfg: &TrainConfig,
    input: &InputPipeline,
) -> Result<TrainOutcome> {
    train_with_progress(spec, train_set, val_set, cfg, input, &mut |_| {})
}

/// Epoch loop: seeded shuffle, batches of `cfg.batch_size` (a final batch
/// smaller than two is dropped), training-mode forward, MSE plus L2,
/// backward, optimizer step, then inference-mode validation. With a
/// validation set and a patience the parameters of the best validation
/// epoch are returned.
pub fn train_with_progress(
    spec: &ModelSpec,
    train_set: &Manifest,
    val_set: Option<&Manifest>,
    cfg: &TrainConfig,
    input: &InputPipeline,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if train_set.len() < 2 {
        return Err(Error::invalid("training needs at least two records"));
    }
    if val_set.is_some_and(|v| v.is_empty()) {
        return Err(Error::invalid("validation manifest is empty"));
    }
    let targets = train_set.targets();
    let target = if cfg.target_standardize {
        TargetScale::fit(&targets)
    } else {
        TargetScale::IDENTITY
    };
    let mut model = TrainedModel {
        spec: spec.clone(),
        params: init_parameters(spec, cfg.seed)?,
        target,
        input: *input,
    };
    let mut state = OptimizerState::new(&cfg.optimizer, &model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Parameters)> = None;
    let unit = target.std * target.std;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut seed::rng(&[cfg.seed, 0x5348_5546, epoch as u64]));
        }
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = model.input.load_batch(train_set, chunk, spec.input)?;
            let t: Vec<f32> = chunk.iter().map(|&i| target.encode(targets[i]) as f32).collect();
            let t = Tensor::scalar_column(&t);
            let mode = Mode::Train {
                seed: cfg.seed,
                step: state.step,
            };
            let (pred, cache) = model_forward(spec, &model.params, &x, mode, false)?;
            let (data_loss, dpred) = mse_loss(&pred, &t)?;
            let loss = data_loss + l2_penalty(&model.params, spec.l2_lambda);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            let grads = model_backward(spec, &model.params, &cache, &dpred)?;
            optimizer_step(&cfg.optimizer, &mut model.params, &grads, &mut state, lr)?;
            cache.apply_running_updates(&mut model.params);
            sum += data_loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_mse = match val_set {
            Some(v) => Some(mse(&model.predict(v)?, &v.targets())),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_mse: sum / seen as f64 * unit,
            val_mse,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        if let (Some(v), Some(patience)) = (val_mse, cfg.early_stop_patience) {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    if let Some((_, epoch, params)) = best {
        model.params = params;
        history.best_epoch = Some(epoch);
    }
    Ok(TrainOutcome {
        model,
        history,
        optimizer: state,
    })
}
