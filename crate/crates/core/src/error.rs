use thiserror::Error;

/// Errors produced by the estimators, tests, models and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context} needs at least {required} rows, got {found}")]
    TooFewRows {
        context: &'static str,
        required: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("non-finite score at coordinate {coordinate} (value {value})")]
    NonFiniteScore { coordinate: usize, value: f64 },

    #[error("optimization failed after {iterations} iterations: {reason}")]
    Optimization { iterations: usize, reason: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_same_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn ensure_rows(context: &'static str, required: usize, found: usize) -> Result<()> {
    if found < required {
        return Err(Error::TooFewRows {
            context,
            required,
            found,
        });
    }
    Ok(())
}
