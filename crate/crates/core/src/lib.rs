pub mod cytoclass;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod manifest;
pub mod seeding;
pub mod transfer;

pub use error::{CoreError, Result};
