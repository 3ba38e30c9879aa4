use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("ingest error: {0}")]
    Dataset(String),

    #[error("invalid model specification:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("model contract violated: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite value for {parameter} at iteration {iteration}")]
    NonFinite { iteration: usize, parameter: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Ingest { .. }
                | Error::Dataset(_)
                | Error::Validation(_)
                | Error::Argument(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
