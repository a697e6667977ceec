//! Crowd annotation of cell-derived flower images.
//!
//! Each labeled cell becomes a task showing only its flower rendering.
//! Annotators pick one of the seven flower classes; majority votes are
//! mapped back to cell classes on export.

pub mod aggregate;
pub mod api;
pub mod error;
pub mod store;
pub mod tasks;

pub use aggregate::{aggregate_votes, AggregatedLabel};
pub use api::{router, serve, AppState, ServeConfig, EXPORT_TOKEN_ENV};
pub use error::{ServeError, ServeResult};
pub use store::{AnnotationRecord, Progress, SubmitOutcome, TaskStore};
pub use tasks::{create_tasks, AnnotationTask, Provenance, TaskStatus, TaskView, DEFAULT_REQUIRED_ANNOTATIONS};
