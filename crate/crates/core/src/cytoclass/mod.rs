//! Seven-class cell-type classifier used to check that translation keeps
//! cell-type information.

pub mod confusion;
pub mod eval;
pub mod model;

pub use confusion::ConfusionMatrix;
pub use eval::{confusion_of, evaluate, EvalReport};
pub use model::{argmax_lowest, build_resnet18, train_classifier, CellClassifier, ClassifierConfig, ClassifierEpoch, Prediction};
