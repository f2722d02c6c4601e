//! Minimal deterministic neural-network engine.
//!
//! Layers cache what they need during `forward` and consume it in `backward`;
//! there is no general autodiff graph. All arithmetic is `f64`.

mod adam;
mod gemm;
pub mod gradcheck;
pub mod io;
mod layers;
mod loss;
mod lstm;

use thiserror::Error;

pub use adam::{Adam, AdamConfig, AdamState};
pub use layers::{
    BatchNorm1d, Conv1d, Dense, Dropout, Layer, LayerKind, MaxPool1d, Relu, conv_output_len,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{Lstm, LstmState};

/// Train mode uses batch statistics and active dropout; Eval is deterministic and pure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("batch norm has no running statistics; run a training-mode forward first")]
    NoRunningStats,
    #[error("target {target} at row {row} is out of range for {classes} classes")]
    TargetOutOfRange { row: usize, target: usize, classes: usize },
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("backward called without a cached forward pass in {0}")]
    NoCache(&'static str),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NnError::Shape { op, detail: detail.into() }
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
