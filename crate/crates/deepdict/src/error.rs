use thiserror::Error;

/// Errors produced by data loading, training, and persistence.
#[derive(Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input files: bad magic numbers, truncated payloads,
    /// ragged rows, out-of-range values.
    #[error("format error: {0}")]
    Format(String),

    /// Shape mismatches between operands or against a declared layout.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Numerically unusable input: rank-deficient initializers,
    /// gram systems that stay singular even after ridge regularization.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Parameter values outside their documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, Error>;
