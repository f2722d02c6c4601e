//! Fixtures shared by the layer and training benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capfusion::data::{Window, WindowDataset};
use capfusion::models::{Architecture, Fusion, ModelSpec};
use capfusion::synth::proposed_sensor_channels;
use capfusion::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Two 10-channel wrist devices, as in the 25 Hz corpora.
pub fn two_device_layout() -> Vec<String> {
    ["left", "right"]
        .iter()
        .flat_map(|d| proposed_sensor_channels().into_iter().map(move |c| format!("{d}/{c}")))
        .collect()
}

/// Default-sized model over one-second 25 Hz windows.
pub fn full_spec(architecture: Architecture, fusion: Fusion, labels: usize) -> ModelSpec {
    ModelSpec::new(architecture, fusion, labels, 25, &two_device_layout())
}

/// `n` random windows with labels cycling over `labels`.
pub fn random_dataset(n: usize, spec: &ModelSpec, labels: usize, seed: u64) -> WindowDataset {
    let channels: Vec<String> = spec.input_layout.iter().map(|c| c.name.clone()).collect();
    let c = channels.len();
    let windows = (0..n)
        .map(|i| Window {
            data: uniform(&[spec.window_len, c], seed.wrapping_add(i as u64)),
            label: i % labels,
            session_id: "S1".into(),
            start_index: i,
        })
        .collect();
    WindowDataset {
        windows,
        window_len: spec.window_len,
        step: 1,
        channel_layout: channels,
        labels: (0..labels).map(|l| format!("L{l}")).collect(),
        warnings: vec![],
    }
}
