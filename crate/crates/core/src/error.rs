use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("degenerate source: {0}")]
    DegenerateSource(String),
    #[error("undefined score: {0}")]
    UndefinedScore(String),
    #[error("sample rate mismatch in {path}: expected {expected} Hz, found {found} Hz")]
    SampleRate {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("ingestion failed for {} file(s): {}", .files.len(), list_paths(.files))]
    Ingestion { files: Vec<PathBuf> },
    #[error("non-finite {what} at example {example_id}")]
    NonFinite { example_id: String, what: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error at {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("json error at {path}: {source}")]
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

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem or file contents rather than by
    /// the caller's parameters.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Wav { .. }
                | Error::Json { .. }
                | Error::Ingestion { .. }
                | Error::SampleRate { .. }
        )
    }
}

fn list_paths(files: &[PathBuf]) -> String {
    files
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
