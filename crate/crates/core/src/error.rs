use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Operation not defined for this model family or size.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Non-finite values or failed factorizations.
    #[error("numeric failure{}: {message}", sample_suffix(.sample_id))]
    Numeric {
        message: String,
        sample_id: Option<u64>,
    },

    /// The inverse Fisher was built at a different parameter vector.
    #[error("stale inverse Fisher: built for parameters {expected}, applied to {actual}")]
    StaleFisher { expected: String, actual: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn sample_suffix(id: &Option<u64>) -> String {
    match id {
        Some(id) => format!(" at sample {id}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, sample_id: Option<u64>) -> Self {
        Self::Numeric {
            message: msg.into(),
            sample_id,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::Parse {
            location: location.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by arithmetic rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Self::Numeric { .. } | Self::Diverged { .. } | Self::Linalg(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
