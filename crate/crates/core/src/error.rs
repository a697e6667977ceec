use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unknown flower directories: {}", .0.join(", "))]
    UnknownFlowerDirs(Vec<String>),
    #[error("class `{0}` has too few records: {1}")]
    TooFewRecords(String, usize),
    #[error("class `{0}` is missing")]
    MissingClass(String),
    #[error("no checkpoint for class `{0}`")]
    MissingCheckpoint(String),
    #[error("non-finite value in loss term `{0}`")]
    NonFinite(String),
    #[error("network: {0}")]
    Nn(#[from] cellbloom_nn::NnError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| CoreError::Io {
            path: path.into(),
            source,
        })
    }
}
