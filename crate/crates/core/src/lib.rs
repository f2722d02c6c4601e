//! Multimodal worker-activity recognition from wrist IMU and body-capacitance sensors.
//!
//! - [`data`]: recordings, clap sync, annotation schemes, windowing
//! - [`nn`]: the float64 layer engine with hand-written backward passes
//! - [`models`]: MC-CNN and DeepConvLSTM with early or late fusion
//! - [`harness`]: leave-one-session-out training, metrics, reports
//! - [`synth`]: synthetic corpora with known labels and offsets
//! - [`verify`]: the finite-difference gradient suite

// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the tensor index formulas
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod harness;
pub mod models;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod verify;

pub use tensor::Tensor;
