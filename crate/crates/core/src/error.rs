use thiserror::Error;

/// Errors raised by the library.
///
/// `Validation` covers bad inputs (the CLI maps it to exit code 1); the
/// remaining variants are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure at slot {slot}: {detail}")]
    Numerical { slot: u64, detail: String },

    #[error("{path}:{line}: {detail}")]
    Format {
        path: String,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by the caller's input rather than by a run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Format { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
