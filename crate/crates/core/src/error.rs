use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::smiles::SmilesError;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report. The variants double as the error
/// categories the CLI maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Smiles(#[from] SmilesError),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Maps a csv failure on `path` onto Io (unreadable file) or Data
    /// (malformed row, with its line number).
    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line());
        let what = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            _ => {
                match line {
                    Some(l) => Error::Data(format!("{}: line {l}: {what}", path.display())),
                    None => Error::Data(format!("{}: {what}", path.display())),
                }
            }
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
