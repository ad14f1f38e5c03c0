//! Optimizers, the training loop and checkpoint files.

mod checkpoint;
mod data;
mod optim;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use data::{stack, InputPipeline, Pipeline, TargetScale};
pub use optim::{adam_step, optimizer_step, sgd_step, Optimizer, OptimizerState};
pub use trainer::{
    train, train_with_progress, EpochRecord, LrSchedule, TrainConfig, TrainHistory, TrainOutcome, TrainedModel,
};
