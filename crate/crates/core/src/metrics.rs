//! Error arithmetic and the per-pipeline, per-split report.
//!
//! The margin is the square root of the MSE, reported in the same square
//! meters as the areas themselves. Accuracy is `1 - margin / center`, where
//! the center is the mean (or median) true area of the evaluated split; it
//! is not clamped and can go negative.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::training::{Pipeline, TrainedModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Training,
    Validation,
    Testing,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Training, Split::Validation, Split::Testing];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Training => "training",
            Split::Validation => "validation",
            Split::Testing => "testing",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Split::Training => "Training",
            Split::Validation => "Validation",
            Split::Testing => "Testing",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" | "train" => Ok(Split::Training),
            "validation" | "val" => Ok(Split::Validation),
            "testing" | "test" => Ok(Split::Testing),
            other => Err(Error::invalid(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub pipeline: Pipeline,
    pub split: Split,
    pub n: usize,
    pub mse: f64,
    pub margin_m: f64,
    pub accuracy_mean: f64,
    pub accuracy_median: f64,
    pub mean_predicted_m2: Option<f64>,
    pub mean_actual_m2: f64,
}

pub fn mse_of(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::invalid(format!(
            "need equal nonzero lengths, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

pub fn margin(mse: f64) -> Result<f64> {
    if !(mse >= 0.0) {
        return Err(Error::invalid(format!("MSE must be non-negative, got {mse}")));
    }
    Ok(mse.sqrt())
}

/// `1 - sqrt(mse) / center`.
pub fn accuracy(mse: f64, center: f64) -> Result<f64> {
    if !(center > 0.0) {
        return Err(Error::invalid(format!(
            "accuracy center must be positive, got {center}"
        )));
    }
    Ok(1.0 - margin(mse)? / center)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Scores predictions against targets for one pipeline and split.
pub fn summarize(pipeline: Pipeline, split: Split, preds: &[f64], targets: &[f64]) -> Result<EvalResult> {
    let mse = mse_of(preds, targets)?;
    let actual = mean(targets);
    Ok(EvalResult {
        pipeline,
        split,
        n: preds.len(),
        mse,
        margin_m: margin(mse)?,
        accuracy_mean: accuracy(mse, actual)?,
        accuracy_median: accuracy(mse, median(targets))?,
        mean_predicted_m2: Some(mean(preds)),
        mean_actual_m2: actual,
    })
}

/// Runs the model (with its own preprocessing) over every record.
pub fn evaluate_pipeline(model: &TrainedModel, manifest: &Manifest, split: Split) -> Result<EvalResult> {
    if manifest.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty manifest"));
    }
    let preds = model.predict(manifest)?;
    summarize(model.input.pipeline, split, &preds, &manifest.targets())
}

pub const REPORT_CSV_HEADER: &str =
    "pipeline,split,n,mse,margin_m,accuracy_mean,accuracy_median,mean_predicted_m2,mean_actual_m2";

fn sorted(results: &[EvalResult]) -> Vec<&EvalResult> {
    let mut rows: Vec<&EvalResult> = results.iter().collect();
    rows.sort_by_key(|r| (r.pipeline, r.split));
    rows
}

/// Full-precision rows in pipeline then split order.
pub fn report_csv(results: &[EvalResult]) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for r in sorted(results) {
        let pred = r.mean_predicted_m2.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.pipeline, r.split, r.n, r.mse, r.margin_m, r.accuracy_mean, r.accuracy_median, pred, r.mean_actual_m2
        )
        .expect("string write");
    }
    s
}

/// Rounds half away from zero to a whole percent.
fn percent(x: f64) -> String {
    format!("~{}%", (x * 100.0).round() as i64)
}

fn model_title(p: Pipeline) -> &'static str {
    match p {
        Pipeline::Cnn => "CNN",
        Pipeline::Threshold => "Threshold Model",
        Pipeline::Contour => "Contour Model",
        Pipeline::Edges => "Edges Model",
    }
}

/// Markdown table in the layout of the comparison table. Training rows
/// leave the predicted average out.
pub fn report_markdown(results: &[EvalResult]) -> String {
    let mut s = String::from(
        "| Model | Data | Mean Squared Error (MSE) | Highest Accuracy (1 - (error / Average of Original Data)) | Average Predicted Lawn Area (sq. m.) | Average Lawn Area of Used Data (sq. m.) |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in sorted(results) {
        let pred = match (r.split, r.mean_predicted_m2) {
            (Split::Testing | Split::Validation, Some(v)) => format!("{v:.2}"),
            _ => "-".to_string(),
        };
        writeln!(
            s,
            "| {} | {} | {:.2} | {} | {} | {:.2} |",
            model_title(r.pipeline),
            r.split.title(),
            r.mse,
            percent(r.accuracy_mean),
            pred,
            r.mean_actual_m2
        )
        .expect("string write");
    }
    s
}

/// Both renderings, CSV first.
pub fn build_report(results: &[EvalResult]) -> (String, String) {
    (report_csv(results), report_markdown(results))
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
    }
}

/// Reads rows written by [`report_csv`].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<EvalResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_CSV_HEADER => {}
        _ => return Err(err(1, format!("expected header {REPORT_CSV_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(i + 1, format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number {s:?}")));
        out.push(EvalResult {
            pipeline: f[0].parse().map_err(|e: Error| err(i + 1, e.to_string()))?,
            split: f[1].parse().map_err(|e: Error| err(i + 1, e.to_string()))?,
            n: f[2].parse().map_err(|_| err(i + 1, format!("bad count {:?}", f[2])))?,
            mse: num(f[3])?,
            margin_m: num(f[4])?,
            accuracy_mean: num(f[5])?,
            accuracy_median: num(f[6])?,
            mean_predicted_m2: parse_opt(f[7]).map_err(|m| err(i + 1, m))?,
            mean_actual_m2: num(f[8])?,
        });
    }
    Ok(out)
}
