use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular system: pivot {pivot:e} at row {row} is below {threshold:e}")]
    Singular {
        row: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("non-finite value in {context} at step {step}")]
    Numeric { context: String, step: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("too few measurements: m = {m}, the bound requires m >= {required}")]
    InsufficientMeasurements { m: usize, required: usize },

    #[error("digest mismatch for {file}: manifest says {expected}, contents hash to {actual}")]
    Digest {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, step: usize) -> Self {
        Error::Numeric {
            context: context.into(),
            step,
        }
    }
}
