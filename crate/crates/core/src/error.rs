use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Grad(#[from] crest_grad::GradError),
    #[error("invalid budget factor: {0}")]
    Budget(String),
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("token id {id} outside vocabulary of size {size}")]
    OutOfVocab { id: usize, size: usize },
    #[error("sequence of {len} tokens exceeds maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("nothing to edit: mask selects no tokens")]
    NothingToEdit,
    #[error("no factual rationale: mask is empty")]
    EmptyRationale,
    #[error("example skipped: {0}")]
    Skip(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
