//! A compact CPU engine for small convolutional networks.
//!
//! Layers keep explicit forward caches and hand-written backward passes;
//! matrix products go through `matrixmultiply`, single threaded, so results
//! are bitwise reproducible on one machine. Everything is generic over
//! [`Real`] so the same network can be evaluated in `f64` for gradient checks.

pub mod conv;
pub mod error;
pub mod init;
pub mod io;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod param;
pub mod real;
pub mod tensor;

pub use conv::{Conv2d, ConvTranspose2d};
pub use error::{NnError, Result};
pub use init::Init;
pub use layers::{Layer, Mode, Residual, SeqCache, Sequential};
pub use norm::BatchNorm2d;
pub use optim::Adam;
pub use param::{Param, Parameters};
pub use real::Real;
pub use tensor::Tensor;
