use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::imaging::{preprocess, Image, Method, PreprocessParams};
use crate::neuralnet::Tensor;
use crate::{Error, Result};

/// The four compared pipelines: the network on raw images, or on one of the
/// preprocessed renderings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Cnn,
    Threshold,
    Contour,
    Edges,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::Cnn, Pipeline::Threshold, Pipeline::Contour, Pipeline::Edges];

    pub fn method(self) -> Method {
        match self {
            Pipeline::Cnn => Method::None,
            Pipeline::Threshold => Method::Threshold,
            Pipeline::Contour => Method::Contour,
            Pipeline::Edges => Method::Canny,
        }
    }

    /// Channels the network sees: color for raw input, one otherwise.
    pub fn input_channels(self) -> usize {
        match self {
            Pipeline::Cnn => 3,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Cnn => "cnn",
            Pipeline::Threshold => "threshold",
            Pipeline::Contour => "contour",
            Pipeline::Edges => "edges",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pipeline {s:?} (cnn, threshold, contour, edges)")))
    }
}

/// How records become network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPipeline {
    pub pipeline: Pipeline,
    pub preprocess: PreprocessParams,
}

impl InputPipeline {
    pub fn new(pipeline: Pipeline) -> Self {
        InputPipeline {
            pipeline,
            preprocess: PreprocessParams::default(),
        }
    }

    /// Applies the pipeline's preprocessing and checks the result against
    /// the expected `(H, W, C)`.
    pub fn prepare(&self, img: &Image, input: [usize; 3]) -> Result<Image> {
        let out = preprocess(img, self.pipeline.method(), &self.preprocess)?;
        let got = [out.height(), out.width(), out.channels()];
        if got != input {
            return Err(Error::shape(format!(
                "{} pipeline produced a {}x{}x{} image, model expects {}x{}x{}",
                self.pipeline, got[0], got[1], got[2], input[0], input[1], input[2]
            )));
        }
        Ok(out)
    }

    /// Loads, preprocesses and scales the given records to `[0, 1]`,
    /// stacked as `[N, H, W, C]`.
    pub fn load_batch(&self, manifest: &Manifest, indices: &[usize], input: [usize; 3]) -> Result<Tensor> {
        let images: Vec<Image> = indices
            .par_iter()
            .map(|&i| {
                let rec = &manifest.records[i];
                let img = manifest.load_image(rec)?;
                self.prepare(&img, input).map_err(|e| match e {
                    Error::Shape(m) => Error::Shape(format!("{}: {m}", manifest.path_of(rec).display())),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(stack(&images, input))
    }
}

/// Stacks already prepared images into a `[0, 1]`-scaled batch.
pub fn stack(images: &[Image], input: [usize; 3]) -> Tensor {
    let per: usize = input.iter().product();
    let mut data = Vec::with_capacity(images.len() * per);
    for img in images {
        data.extend(img.data().iter().map(|&v| v as f32 / 255.0));
    }
    Tensor::new(&[images.len(), input[0], input[1], input[2]], data).expect("prepared images match input")
}

/// Affine map between areas and network targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };

    /// Standardizes to zero mean and unit (population) variance; a constant
    /// target keeps unit scale.
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        TargetScale { mean, std }
    }

    pub fn encode(&self, area: f64) -> f64 {
        (area - self.mean) / self.std
    }

    pub fn decode(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}
