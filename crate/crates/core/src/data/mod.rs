//! Recording and label formats, clap synchronization, annotation schemes,
//! sliding-window segmentation and normalization.

mod activity;
mod labels;
mod normalize;
mod recording;
mod scheme;
mod sync;
mod window;

use std::path::PathBuf;

use thiserror::Error;

pub use activity::{Activity, Modality};
pub use labels::{LabelInterval, LabelTrack};
pub use normalize::Normalizer;
pub use recording::SensorRecording;
pub use scheme::{apply_scheme, ActivityScheme, SchemeName, SchemeTrack};
pub use sync::{align_devices, detect_clap_sync, ClapConfig, ClapSync, MergedStream};
pub use window::{segment_windows, SampleClass, Window, WindowDataset};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}, line {line}{}: {detail}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse { origin: String, line: usize, column: Option<usize>, detail: String },
    #[error("duplicate channel name {0:?}")]
    DuplicateChannel(String),
    #[error("unknown activity {0:?}")]
    UnknownActivity(String),
    #[error("invalid label track: {0}")]
    InvalidLabels(String),
    #[error("invalid scheme mapping: {0}")]
    InvalidScheme(String),
    #[error("clap synchronization not found: only {found} peaks detected")]
    SyncNotFound { found: usize },
    #[error("mixed sampling rates ({0}); resampling is not supported")]
    MixedRates(String),
    #[error("aligned recordings do not overlap")]
    EmptyOverlap,
    #[error("{0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
