use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("windows differ: {left} vs {right}")]
    WindowMismatch { left: String, right: String },

    #[error("matrix is singular or too ill-conditioned (reciprocal condition estimate {rcond:e})")]
    Singular { rcond: f64 },

    #[error("{what} did not converge after {iterations} iterations (last estimate {estimate:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        estimate: f64,
    },

    /// The value overflows `f64`; its natural logarithm is carried instead.
    #[error("value out of floating-point range (ln value = {log_value})")]
    Range { log_value: f64 },

    #[error("search cap {cap} reached: {diagnostic}")]
    Cap { cap: u64, diagnostic: String },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
