//! Experiment configuration, training loops, checkpoints and ablations.

use thiserror::Error;

pub mod ablation;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod gan;
pub mod models;
pub mod optim;
pub mod samples;
pub mod semisup;

pub use ablation::{run_ablation, AblationGrid, AblationTable, Variant};
pub use checkpoint::Checkpoint;
pub use classifier::ScoreClassifier;
pub use config::{DatasetSpec, ExperimentConfig, NormKind};
pub use gan::{train_gan, GanState, GanTrainer, RunStatus, RunSummary, StepRecord};
pub use optim::Adam;
pub use samples::export_sample_grid;
pub use semisup::{semisup_sweep, train_semisup, SemiSupSummary};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Objective(#[from] crate::objectives::ObjectiveError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainerError> = std::result::Result<T, E>;
