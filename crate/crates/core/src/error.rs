use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsdpError>;

#[derive(Debug, Error)]
pub enum DsdpError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A request exceeds a hard resource ceiling (e.g. enumeration size).
    #[error("resource limit: {what} = {requested} exceeds ceiling {ceiling}")]
    ResourceLimit {
        what: &'static str,
        requested: usize,
        ceiling: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Internal sampler bookkeeping disagrees with a recomputation.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DsdpError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        DsdpError::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DsdpError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
