//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UdetError {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A caller-supplied value violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed or inconsistent on-disk data (headers, manifests, configs).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Non-finite values or other numerical breakdown during computation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A verification suite (gradient check, parameter audit) did not pass.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, UdetError>;

impl UdetError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        UdetError::ShapeMismatch { op, detail: detail.into() }
    }
}
