//! Optimization: Adam with step-decay learning rate, gradient clipping,
//! early stopping on validation MAE, and resumable checkpoints.

mod adam;
mod checkpoint;
mod run;

pub use adam::{clip_global_norm, lr_schedule, optimizer_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, Progress};
pub use run::{
    initial_checkpoint, train, train_from, EpochLog, TrainConfig, TrainData, TrainOutcome,
};
