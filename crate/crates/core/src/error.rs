use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (negative time,
    /// reversed interval, horizon not positive, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters or inputs fail structural validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called before the state it depends on exists, e.g.
    /// a backward pass without forward normalizers.
    #[error("state error: {0}")]
    State(String),

    #[error("inference error: zero-likelihood observation at index {index} (t = {time})")]
    ZeroLikelihood { index: usize, time: f64 },

    #[error("numerical instability in interval {interval}: {detail}")]
    Instability { interval: usize, detail: String },

    #[error("chain-length truncation: cumulative mass {mass} after n = {n_max} jumps is below 1 - {tol}")]
    Truncation { n_max: usize, mass: f64, tol: f64 },

    #[error("memory kernel unavailable for {0}; use the current-based solver")]
    KernelUnavailable(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
