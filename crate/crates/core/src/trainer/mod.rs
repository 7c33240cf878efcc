//! Optimisation: Adam with per-entry gradient clipping, the training
//! regimes, checkpoints and a finite-difference gradient check.

mod adam;
mod checkpoint;
mod gradcheck;
mod train;

pub use adam::{clip_gradients, Adam};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use train::{config_hash, train, train_from, EpochRecord, Regime, TrainConfig, TrainHistory, TrainState};
