use thiserror::Error;

/// Unified error type for the whole crate.
///
/// Variants split into two families used by callers to pick exit codes:
/// parameter/domain problems (the input asked for something outside the
/// supported range) and accuracy/resolution problems (the computation
/// could not reach the requested tolerance).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument value or malformed input.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Evaluation requested outside a function's mathematical domain
    /// (e.g. the derivative of the variance function at a singularity).
    #[error("domain error: {0}")]
    Domain(String),

    /// A coordinate vector or grid was too short for the requested
    /// operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A time point fell outside a precomputed coefficient table.
    #[error("range error: {0}")]
    Range(String),

    /// Exact integer arithmetic (multi-index factorials) exceeded the
    /// representable range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// A combinatorial enumeration or Wick product would exceed the
    /// configured term cap.
    #[error("truncation overflow: {0}")]
    CapExceeded(String),

    /// A series or integral that the caller asked to sum diverges.
    #[error("divergent: {0}")]
    Divergence(String),

    /// A sampled-function grid is too coarse for the requested
    /// transform.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Quadrature or iteration failed to reach the requested tolerance
    /// within its budget.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Cache or report I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Cache or report (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the computation failing to reach a
    /// tolerance, as opposed to bad input.
    pub fn is_accuracy(&self) -> bool {
        matches!(self, Error::Accuracy(_) | Error::Resolution(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
