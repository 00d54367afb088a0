//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/geometry shape violations (wrong dimensions, mismatched operands).
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid numeric or structural argument to a library call.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Run-configuration problems (bad values, unknown keys, missing referenced files).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data files: checkpoints, images, scene/view descriptions.
    #[error("format error: {0}")]
    Format(String),

    /// A noise field was applied to a viewpoint or sample grid it was not trained for.
    #[error("viewpoint mismatch: {0}")]
    ViewpointMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
