use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Range(String),
    #[error("singular evaluation: {0}")]
    Singularity(String),
    #[error("tail model required: {0}")]
    TailRequired(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no convergence in {context} after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },
    #[error("computational box too small: {0}")]
    BoxTooSmall(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::NoConvergence { .. })
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
