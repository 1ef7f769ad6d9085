use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("degenerate batch: batch norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("augmentation policy error: {0}")]
    Policy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
