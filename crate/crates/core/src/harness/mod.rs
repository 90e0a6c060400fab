//! Training, evaluation, the ablation ladder and the generation probes.

mod ablate;
mod config;
mod metrics;
mod probes;
mod train;

use thiserror::Error;

pub use ablate::{ablate, AblationBudget, AblationRecord, AblationTable, Variant};
pub use config::{TrainConfig, DEFAULT_SEED, DEFAULT_STEPS};
pub use metrics::{binary_scores, evaluate, mean_std, receiver_probabilities, shot_probabilities, top_k_accuracy, BinaryScores, MetricsReport};
pub use probes::{generation_shift_probe, realism_probe, shift_probe, RealismReport, ShiftReport, SHIFT_MIN_SAMPLES};
pub use train::{check_labels, dataset_loss, derive_seed, train, train_with_progress, Snapshot, TrainRun, HOLDOUT_MIN, TAPE_CHUNK};

use crate::autodiff::AutodiffError;
use crate::checkpoint::CheckpointError;
use crate::cornergraph::CornerError;
use crate::heads::{HeadError, Task};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{task} training needs `{field}`, which corner `{id}` lacks")]
    Labels { task: Task, id: String, field: &'static str },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corner(#[from] CornerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
