//! Per-pair unpaired cell↔flower translation with cycle consistency.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nets;
pub mod pool;
pub mod step;

pub use checkpoint::{read_history, train_pair, train_pair_on, write_history, HistoryRow, TrainOptions, TransferCheckpoint};
pub use config::{lr_at, DiscriminatorSpec, GeneratorSpec, TransferConfig};
pub use loss::{adversarial_loss, cycle_loss};
pub use model::{Direction, IdentityTranslator, TransferModel, Translator};
pub use nets::{build_discriminator, build_generator};
pub use pool::ImagePool;
pub use step::{CycleNets, GeneratorPass, LossRecord};
