use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("checkpoint load error: {0}")]
    Load(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    State,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape(_)
            | Error::Config(_)
            | Error::Input(_)
            | Error::Ingestion(_)
            | Error::Partition(_)
            | Error::Build(_)
            | Error::Load(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::State(_) => ErrorClass::State,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => ErrorClass::Input,
            Error::Io { .. } => ErrorClass::Internal,
        }
    }
}
