use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("homophily ratio undefined: graph has no edges")]
    UndefinedRatio,

    #[error("ground-truth labels are required but missing")]
    MissingLabels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {what} at epoch {epoch}")]
    Numeric { what: String, epoch: usize },

    #[error("training diverged; last finite epoch was {last_finite_epoch:?}")]
    Divergence { last_finite_epoch: Option<usize> },

    #[error("k-means produced an empty cluster after {attempts} re-seeding attempts")]
    EmptyCluster { attempts: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
