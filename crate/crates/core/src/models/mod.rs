//! MC-CNN and DeepConvLSTM under early data fusion, late feature fusion and
//! the IMU-only ablation.

mod fusion;
mod spec;

use thiserror::Error;

use crate::nn::NnError;

pub use fusion::{build_model, count_parameters, FusionModel, ModelObjective};
pub use spec::{Architecture, ChannelSpec, Fusion, ModelHyper, ModelSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("window of {window_len} samples is too short for the conv/pool schedule; length trace {trace:?}")]
    WindowTooShort { window_len: usize, trace: Vec<usize> },
    #[error("input has {got} channels, model layout expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
