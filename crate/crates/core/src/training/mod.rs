//! Joint masking-reconstruction loss, Adam, and the training loop.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod trainer;
pub mod windows;

pub use adam::{adam_step, OptimizerState};
pub use loss::{joint_loss, LossKind, LossReport, Targets};
pub use trainer::{
    load_trainer, save_trainer, train, validate, write_metric_log, EpochRecord, StopReason, TrainConfig, TrainOutcome,
    TrainSet, TrainerState,
};
pub use windows::{build_window, window_starts, WindowSample, WindowTargets};
