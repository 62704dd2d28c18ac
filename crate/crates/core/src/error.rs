use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("index {index} out of range for {len} sensors")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("{solver} did not reach tolerance {tol:e} within {iters} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iters: usize,
        tol: f64,
        residual: f64,
    },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NotConverged { .. })
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub type Result<T> = std::result::Result<T, Error>;
