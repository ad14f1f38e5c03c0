//! k-fold cross-validation and exhaustive grid search.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::metrics::mse_of;
use crate::neuralnet::Architecture;
use crate::training::{train, InputPipeline, TrainConfig};
use crate::{seed, Error, Result};

/// Shuffles `0..n` with `seed` and cuts it into `k` folds whose sizes differ
/// by at most one (the larger folds first).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!(
            "k-fold needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(&[seed, 0x4b46_4f4c_44]));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[at..at + len].to_vec());
        at += len;
    }
    Ok(folds)
}

/// Candidate values per hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub learning_rate: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub l2_lambda: Vec<f64>,
    pub base_filters: Vec<usize>,
}

/// One coordinate of a [`ParamGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub base_filters: usize,
}

impl GridPoint {
    fn identity(&self) -> [u64; 4] {
        [
            self.learning_rate.to_bits(),
            self.dropout_rate.to_bits(),
            self.l2_lambda.to_bits(),
            self.base_filters as u64,
        ]
    }
}

impl ParamGrid {
    /// Single-point grid at the given defaults.
    pub fn single(arch: &Architecture, cfg: &TrainConfig) -> Self {
        ParamGrid {
            learning_rate: vec![cfg.learning_rate],
            dropout_rate: vec![arch.dropout],
            l2_lambda: vec![arch.l2_lambda],
            base_filters: vec![arch.base_filters],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("learning_rate", self.learning_rate.len()),
            ("dropout_rate", self.dropout_rate.len()),
            ("l2_lambda", self.l2_lambda.len()),
            ("base_filters", self.base_filters.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::invalid(format!("grid axis {name} is empty")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rate.len() * self.dropout_rate.len() * self.l2_lambda.len() * self.base_filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points, the last axis varying fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rate {
            for &dropout_rate in &self.dropout_rate {
                for &l2_lambda in &self.l2_lambda {
                    for &base_filters in &self.base_filters {
                        out.push(GridPoint {
                            learning_rate,
                            dropout_rate,
                            l2_lambda,
                            base_filters,
                        });
                    }
                }
            }
        }
        out
    }

    /// Parses `key=v1,v2,...` lines. Blank lines and `#` comments are
    /// ignored; axes not mentioned keep the values already in `self`.
    pub fn parse_into(mut self, text: &str, path: &Path) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=values, got {line:?}")))?;
            let values: Vec<&str> = values.split(',').map(str::trim).collect();
            let floats = || -> Result<Vec<f64>> {
                values
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad number {v:?}"))))
                    .collect()
            };
            match key.trim() {
                "learning_rate" => self.learning_rate = floats()?,
                "dropout_rate" => self.dropout_rate = floats()?,
                "l2_lambda" => self.l2_lambda = floats()?,
                "base_filters" => {
                    self.base_filters = values
                        .iter()
                        .map(|v| v.parse::<usize>().map_err(|_| err(format!("bad count {v:?}"))))
                        .collect::<Result<_>>()?
                }
                other => return Err(err(format!("unknown grid axis {other:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// Settings shared by every grid point.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub k: usize,
    pub seed: u64,
    /// Epochs per fold.
    pub epochs: usize,
    /// Fold over origin ids so augmented twins never straddle a fold
    /// boundary; otherwise fold over individual records.
    pub by_origin: bool,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub input: InputPipeline,
    /// Image `(H, W)`; channels follow the pipeline.
    pub image_size: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub point: GridPoint,
    pub fold_mses: Vec<f64>,
    pub mean_mse: f64,
}

/// Held-out record indices for each fold, folding over origin ids or over
/// individual records.
pub fn cv_folds(manifest: &Manifest, k: usize, seed: u64, by_origin: bool) -> Result<Vec<Vec<usize>>> {
    if !by_origin {
        return kfold_split(manifest.len(), k, seed);
    }
    let origins = manifest.origins();
    let folds = kfold_split(origins.len(), k, seed)?;
    Ok(folds
        .iter()
        .map(|f| {
            let held: HashSet<&str> = f.iter().map(|&i| origins[i].as_str()).collect();
            (0..manifest.len())
                .filter(|&i| held.contains(manifest.records[i].origin_id.as_str()))
                .collect()
        })
        .collect())
}

/// Cross-validates every grid point. Each fold trains on the other folds
/// and scores MSE on itself; the best point has the lowest mean, the first
/// in enumeration order on ties. Seeds depend on the point's values and the
/// fold, not on its position in the grid.
pub fn grid_search(grid: &ParamGrid, manifest: &Manifest, cfg: &SearchConfig) -> Result<(GridPoint, Vec<CvResult>)> {
    grid.validate()?;
    let folds = cv_folds(manifest, cfg.k, cfg.seed, cfg.by_origin)?;
    let points = grid.points();
    let [h, w] = cfg.image_size;
    let input_shape = [h, w, cfg.input.pipeline.input_channels()];

    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.k).map(move |f| (p, f)))
        .collect();
    let scores: Vec<f64> = tasks
        .par_iter()
        .map(|&(p, f)| {
            let point = points[p];
            let tag = |e: Error| Error::GridPoint {
                point: p,
                fold: f,
                source: Box::new(e),
            };
            let arch = Architecture {
                dropout: point.dropout_rate,
                l2_lambda: point.l2_lambda,
                base_filters: point.base_filters,
                ..cfg.arch.clone()
            };
            let spec = arch.build(input_shape).map_err(tag)?;
            let held: HashSet<usize> = folds[f].iter().copied().collect();
            let rest: Vec<usize> = (0..manifest.len()).filter(|i| !held.contains(i)).collect();
            let [lr, dr, l2, bf] = point.identity();
            let tc = TrainConfig {
                epochs: cfg.epochs,
                learning_rate: point.learning_rate,
                seed: seed::derive(&[cfg.seed, lr, dr, l2, bf, f as u64]),
                ..cfg.train.clone()
            };
            let out = train(&spec, &manifest.subset(&rest), None, &tc, &cfg.input).map_err(tag)?;
            let test = manifest.subset(&folds[f]);
            let preds = out.model.predict(&test).map_err(tag)?;
            mse_of(&preds, &test.targets()).map_err(tag)
        })
        .collect::<Result<_>>()?;

    let results: Vec<CvResult> = points
        .iter()
        .enumerate()
        .map(|(p, point)| {
            let fold_mses = scores[p * cfg.k..(p + 1) * cfg.k].to_vec();
            let mean_mse = fold_mses.iter().sum::<f64>() / cfg.k as f64;
            CvResult {
                point: *point,
                fold_mses,
                mean_mse,
            }
        })
        .collect();
    let best = results
        .iter()
        .fold(None::<&CvResult>, |b, r| match b {
            Some(b) if b.mean_mse <= r.mean_mse => Some(b),
            _ => Some(r),
        })
        .expect("grid is nonempty");
    Ok((best.point, results))
}

/// One row per (point, fold), then one `mean` row per point.
pub fn results_csv(results: &[CvResult]) -> String {
    let mut s = String::from("point,learning_rate,dropout_rate,l2_lambda,base_filters,fold,mse\n");
    let prefix = |i: usize, p: &GridPoint| {
        format!(
            "{i},{},{},{},{}",
            p.learning_rate, p.dropout_rate, p.l2_lambda, p.base_filters
        )
    };
    for (i, r) in results.iter().enumerate() {
        for (f, m) in r.fold_mses.iter().enumerate() {
            writeln!(s, "{},{f},{m}", prefix(i, &r.point)).expect("string write");
        }
    }
    for (i, r) in results.iter().enumerate() {
        writeln!(s, "{},mean,{}", prefix(i, &r.point), r.mean_mse).expect("string write");
    }
    s
}
