use alloc::string::String;

/// Errors raised by the lifting pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input violates an operation's domain (pixel out of bounds, point
    /// outside a box, non-positive radius, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Dimensions or configuration of two inputs do not agree.
    #[error("config error: {0}")]
    Config(String),
    /// Two buffers that must share a shape do not.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    /// A field evaluation produced a non-finite value.
    #[error("non-finite field output on ray {ray} (sample {sample})")]
    NonFiniteField { ray: usize, sample: usize },
    /// The training loss became NaN or infinite.
    #[error("non-finite loss at step {step} for object {object}")]
    NonFiniteLoss { step: u64, object: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape { expected: expected.into(), got: got.into() }
}
