//! Leave-one-session-out evaluation: folds, training with early stopping,
//! metrics, and mean ± std reports.

mod experiment;
mod folds;
mod metrics;
mod report;
mod train;

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::nn::NnError;

pub use experiment::{
    experiment_spec, load_sessions, prepare_sessions, run_experiment, run_fold, ExperimentConfig, FoldRun, PreparedSession,
    RawSession,
};
pub use folds::{make_loso_folds, Fold, FoldPlan};
pub use metrics::{argmax, evaluate, ConfusionMatrix, Evaluation, MetricTriplet};
pub use report::{
    aggregate, compare, format_cell, mean_and_sample_std, render_comparison, render_report, Comparison, ComparisonColumn,
    ExperimentReport, Fingerprint, FoldResult, MetricSummary,
};
pub use train::{train, EpochRecord, History, TrainConfig, Trained};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("leave-one-session-out needs at least 3 sessions, got {0}")]
    TooFewSessions(usize),
    #[error("duplicate session id {0:?}")]
    DuplicateSession(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent reports: {0}")]
    Inconsistent(String),
    #[error("fold {fold} (test session {session}): {source}")]
    Fold { fold: usize, session: String, source: Box<HarnessError> },
    #[error("session {session}: {source}")]
    Session { session: String, source: DataError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
