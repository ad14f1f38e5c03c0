//! Lawn area estimation from small aerial images.
//!
//! Four pipelines are compared: a regression CNN on raw RGB images, and the
//! same network fed thresholded, contoured, or Canny edge images. Everything
//! needed for the comparison lives here: image operators, a synthetic scene
//! generator with exact ground truth, seeded augmentation and splitting, a
//! small forward/backward network stack, the training loop, the evaluation
//! arithmetic, k-fold grid search and the command-line driver.

pub mod cli;
pub mod dataset;
mod error;
pub mod imaging;
pub mod metrics;
pub mod neuralnet;
pub mod seed;
pub mod training;
pub mod tuning;

pub use error::{CheckpointError, Error, Result};
