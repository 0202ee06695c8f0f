use thiserror::Error;

/// Errors shared across the pooling kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// Geometry and data extents do not line up (kernel larger than the
    /// padded input, mismatched beta/output shapes, wrong payload length, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Two channel vectors of different lengths were compared.
    #[error("dimension mismatch: expected {expected} channels, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A backward or unpool call needs state the forward pass did not save.
    #[error("missing saved state: {0}")]
    MissingState(&'static str),

    /// NaN or infinity where finite data is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A parameter is outside its valid domain (Huber delta, beta range, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
