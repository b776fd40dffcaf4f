use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] polyreg_core::Error),
    #[error(transparent)]
    Autodiff(#[from] polyreg_autodiff::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step} (lr {lr}, batch seed {batch_seed}): {reason}")]
    Diverged {
        step: usize,
        lr: f64,
        batch_seed: u64,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
