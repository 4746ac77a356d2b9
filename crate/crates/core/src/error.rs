use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {width}x{height} is below the minimum size")]
    GridTooSmall { width: usize, height: usize },

    #[error("expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("tensor arity must be {expected}, got {found}")]
    InvalidArity { expected: &'static str, found: usize },

    #[error("norm exponent must be >= 1, got {0}")]
    InvalidExponent(f64),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("kernel support {kernel}x{kernel} exceeds image {width}x{height}")]
    KernelTooLarge {
        kernel: usize,
        width: usize,
        height: usize,
    },

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NormNotConverged { iterations: usize, last_change: f64 },

    #[error("solver state became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("observation has zero total count")]
    EmptyObservation,

    #[error("lambda left [{min:e}, {max:e}] at meta-iteration {meta_iteration}: {lambda:e}")]
    LambdaOutOfRange {
        lambda: f64,
        min: f64,
        max: f64,
        meta_iteration: usize,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("image dimensions {width}x{height} exceed the supported size")]
    DimensionOverflow { width: usize, height: usize },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("{extra} unexpected bytes after the payload")]
    TrailingBytes { extra: usize },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter { name, value, reason }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NormNotConverged { .. } | Error::Diverged { .. } | Error::LambdaOutOfRange { .. }
        )
    }
}
