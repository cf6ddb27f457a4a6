use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("dtype mismatch in {op}: {detail}")]
    Dtype { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid state in {op}: {detail}")]
    State { op: &'static str, detail: String },

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn dtype(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dtype {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn state(op: &'static str, detail: impl Into<String>) -> Self {
        Error::State {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
