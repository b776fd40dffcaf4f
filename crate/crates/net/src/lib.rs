//! Learned regressors: a convolutional encoder whose output is read through
//! the fixed polynomial decoder, plus the training loop.

pub mod error;
pub mod manifest;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use model::{manifest_path, Arch, EncoderConfig, Forward, Model, PendingStats};
pub use train::{batch_for_step, batch_loss, train, validate, LossMode, LossRecord, LrDecay, Schedule, TrainConfig, TrainReport};
