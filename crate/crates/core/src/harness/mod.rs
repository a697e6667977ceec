//! The real-vs-reconstructed experiment and its synthetic desk-scale fixture.

pub mod desk;
pub mod experiment;
pub mod synthetic;

pub use desk::{desk_history_path, run_desk_pipeline, DeskConfig, DeskOutcome};
pub use experiment::{
    build_reconstructed_testset, reconstruction_metrics, run_experiment, Accuracy, ExperimentOptions, ExperimentReport,
    ReconstructedSet, ReconstructionMetrics, TranslatorSet, RECONSTRUCTED_SUFFIX,
};
pub use synthetic::{class_color, generate_synthetic_domains, render_cell, render_flower, SyntheticDomainSpec};
