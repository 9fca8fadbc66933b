use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::calibrator::CalibError;
use crate::metrics::MetricsError;
use crate::prompt::PromptError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Every variant that can arise mid-experiment carries the
/// stage that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dataset {path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Prompt(#[from] PromptError),

    #[error("{stage}: {source}")]
    Backend {
        stage: String,
        #[source]
        source: BackendError,
    },

    #[error("{stage}: {source}")]
    Calibration {
        stage: String,
        #[source]
        source: CalibError,
    },

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn backend(stage: impl Into<String>, source: BackendError) -> Self {
        Error::Backend {
            stage: stage.into(),
            source,
        }
    }

    pub(crate) fn calibration(stage: impl Into<String>, source: CalibError) -> Self {
        Error::Calibration {
            stage: stage.into(),
            source,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when training produced non-finite parameters or loss.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Calibration {
                source: CalibError::Diverged { .. },
                ..
            }
        )
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}
