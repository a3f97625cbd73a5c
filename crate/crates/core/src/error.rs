use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty panel: step {step} ({name}) removed every remaining observation")]
    EmptyPanel { step: usize, name: String },

    #[error("rank-deficient design; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),

    #[error("io error on {path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
