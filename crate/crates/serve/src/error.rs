use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("task {0} not found")]
    UnknownTask(u64),
    #[error("annotator `{annotator}` already voted on task {task_id}")]
    DuplicateVote { task_id: u64, annotator: String },
    #[error("task {0} is complete")]
    TaskClosed(u64),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("task {0} has no votes")]
    NoVotes(u64),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] cellbloom_core::CoreError),
}

pub type ServeResult<T> = Result<T, ServeError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ServeError {
    let path = path.into();
    move |source| ServeError::Io { path, source }
}
