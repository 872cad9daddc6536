use thiserror::Error;

pub type Result<T, E = GradError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("node {node} ({op}): expected shape {expected}, got {actual}")]
    Shape {
        node: usize,
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("tensor shape {shape:?} does not hold {len} elements")]
    Layout { shape: Vec<usize>, len: usize },
    #[error("node {node} ({op}): non-finite or out-of-domain input")]
    Domain { node: usize, op: &'static str },
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("parameter `{0}` missing from store")]
    MissingParam(String),
    #[error("custom op {name}: {message}")]
    Custom { name: &'static str, message: String },
}

pub(crate) fn shape_err(
    node: usize,
    op: &'static str,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
) -> GradError {
    GradError::Shape {
        node,
        op,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
