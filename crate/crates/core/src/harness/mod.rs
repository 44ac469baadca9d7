//! Operational surface: experiment configs, the training loop with
//! checkpoints and resume, the learning-rate sweep, the gradient-check
//! suite and the command-line front end.

pub mod cli;
pub mod config;
pub mod gradcheck;
pub mod sweep;
pub mod train;

pub use config::{apply_override, resolve_lr, DataConfig, ExperimentConfig, LossConfig, LossKind, TrainConfig};
pub use sweep::{lr_sweep, select_best, SweepOutcome, SweepRun, SWEEP_LRS};
pub use train::{
    evaluate, train, write_report, DataSource, LogRecord, TrainOptions, TrainOutcome, TrainState, WindowMetric,
};
