use thiserror::Error;

/// Errors raised by tensor arithmetic and space manipulation.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dtype mismatch: {0}")]
    DTypeMismatch(String),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: isize, rank: usize },
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("value does not match space: {0}")]
    SpaceViolation(String),
    #[error("gradient error: {0}")]
    Gradient(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
