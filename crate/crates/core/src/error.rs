use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments: arity mismatch, unknown names, out-of-range parameters.
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite or otherwise invalid input values.
    #[error("domain error: {0}")]
    Domain(String),

    /// The estimator cannot be formed from the data at hand.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// An optimizer stopped before reaching its gradient tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        theta: Vec<f64>,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}
