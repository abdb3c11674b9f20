//! Optimizer, learning-rate schedule, metrics and the training loop.

mod adam;
mod config;
mod metrics;
mod schedule;
mod train;

pub use adam::Adam;
pub use config::TrainConfig;
pub use metrics::{argmax, cross_entropy, MetricsReport};
pub use schedule::{one_cycle, peak_step};
pub use train::{
    batches, evaluate, EarlyStopping, history_csv, rng_for, train, EpochRecord, RngStream, StopReason, TrainOutcome, EVAL_BATCH,
};
