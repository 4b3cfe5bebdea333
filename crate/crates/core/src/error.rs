use std::path::PathBuf;

/// Errors raised by the simulator, the analytic toolkit and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("non-finite value on worker {worker} at step {step}")]
    NonFinite { worker: usize, step: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("undefined value at index {index}: {message}")]
    Undefined { index: usize, message: String },

    #[error("numerical failure: {message} (last good step {last_good_step:?})")]
    Numerical {
        message: String,
        last_good_step: Option<usize>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InvalidParameter(_) | Error::Serde(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
