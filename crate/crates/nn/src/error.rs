use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("missing tensor `{0}` in state dict")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}` in state dict")]
    UnexpectedTensor(String),
    #[error("tensor `{name}` has dtype {found}, expected f32 or f64")]
    Dtype { name: String, found: String },
    #[error("safetensors: {0}")]
    SafeTensors(#[from] safetensors::SafeTensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
