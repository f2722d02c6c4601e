//! Randomized finite-difference checks over every layer kind and both architectures.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{build_model, Architecture, Fusion, ModelObjective, ModelSpec};
use crate::nn::gradcheck::{grad_check, Differentiable, LayerStack, Objective};
use crate::nn::{BatchNorm1d, Conv1d, Dense, Layer, Lstm, MaxPool1d, Mode, NnError, Result};
use crate::tensor::Tensor;

/// Acceptance tolerance on the worst relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Start step of the extrapolated differences; small gradients need a wide step to clear roundoff.
pub const EPSILON: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub worst_location: String,
    pub worst_seed: u64,
    pub checked: usize,
    pub skipped: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < TOLERANCE
    }
}

pub const CASES: [&str; 7] = ["Conv1D", "BatchNorm1D", "MaxPool1D", "Dense", "LSTM", "MC-CNN", "DeepConvLSTM"];

fn uniform(shape: &[usize], rng: &mut dyn RngCore) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn projection(n: usize, rng: &mut dyn RngCore) -> Objective {
    Objective::Projection((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn jitter(t: &mut Tensor, rng: &mut dyn RngCore) {
    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
}

fn targets(b: usize, k: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    (0..b).map(|_| rng.random_range(0..k)).collect()
}

/// Builds the checked object and its input for one case and seed.
fn case(name: &str, seed: u64) -> Result<(Box<dyn Differentiable>, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    Ok(match name {
        "Conv1D" => {
            let (c_in, c_out, k, stride) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5), r.random_range(1..3));
            let len = k + r.random_range(0..6);
            let mut conv = Conv1d::new(c_in, c_out, k, stride)?;
            conv.init(r);
            conv.bias.data_mut().iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
            let b = r.random_range(1..4);
            let x = uniform(&[b, c_in, len], r);
            let out = b * c_out * ((len - k) / stride + 1);
            (Box::new(LayerStack::new(vec![Layer::Conv1d(conv)], projection(out, r))), x)
        }
        "BatchNorm1D" => {
            let (b, c, l) = (r.random_range(2..5), r.random_range(1..4), r.random_range(2..6));
            let mut bn = BatchNorm1d::new(c, 1e-5, 0.1)?;
            bn.gamma.data_mut().iter_mut().for_each(|g| *g = r.random_range(0.5..1.5));
            bn.beta.data_mut().iter_mut().for_each(|g| *g = r.random_range(-0.5..0.5));
            let x = uniform(&[b, c, l], r);
            let obj = projection(b * c * l, r);
            let mut stack = LayerStack::new(vec![Layer::BatchNorm1d(bn)], obj);
            stack.mode = Mode::Train;
            (Box::new(stack), x)
        }
        "MaxPool1D" => {
            let (b, c, pool) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let l = pool * r.random_range(1..5) + r.random_range(0..pool);
            let x = uniform(&[b, c, l], r);
            let obj = projection(b * c * (l / pool), r);
            (Box::new(LayerStack::new(vec![Layer::MaxPool1d(MaxPool1d::new(pool)?)], obj)), x)
        }
        "Dense" => {
            let (b, i, o) = (r.random_range(1..5), r.random_range(1..6), r.random_range(2..6));
            let mut d = Dense::new(i, o)?;
            d.init(r);
            d.bias.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
            let x = uniform(&[b, i], r);
            let t = targets(b, o, r);
            (Box::new(LayerStack::new(vec![Layer::Dense(d)], Objective::CrossEntropy(t))), x)
        }
        "LSTM" => {
            let (b, t, f, h) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..4), r.random_range(1..4));
            let mut lstm = Lstm::new(f, h)?;
            lstm.init(r);
            let x = uniform(&[b, t, f], r);
            let obj = projection(b * t * h, r);
            (Box::new(LayerStack::new(vec![Layer::Lstm(lstm)], obj)), x)
        }
        "MC-CNN" | "DeepConvLSTM" => {
            let arch = if name == "MC-CNN" { Architecture::McCnn } else { Architecture::DeepConvLSTM };
            let fusion = [Fusion::EarlyData, Fusion::LateFeature, Fusion::ImuOnly][r.random_range(0..3)];
            let imu = r.random_range(2..4);
            let bcs = r.random_range(1..3);
            let names: Vec<String> =
                (0..imu).map(|i| format!("d/acc{i}")).chain((0..bcs).map(|i| format!("d{i}/cap"))).collect();
            let window = if arch == Architecture::McCnn { 25 } else { 14 };
            let k = 3;
            let mut spec = ModelSpec::new(arch, fusion, k, window, &names);
            spec.seed = seed;
            spec.hyper.filters = Some(if arch == Architecture::McCnn { vec![3, 3, 3] } else { vec![3, 3] });
            spec.hyper.bcs_filters = 2;
            spec.hyper.dense_hidden = 5;
            spec.hyper.lstm_hidden = 4;
            let mut model = build_model(&spec).map_err(|e| NnError::Hyper(e.to_string()))?;
            // zero-initialized biases put whole rows exactly on a ReLU kink
            for layer in model.layers_mut() {
                match layer {
                    Layer::Conv1d(c) => jitter(&mut c.bias, r),
                    Layer::Dense(d) => jitter(&mut d.bias, r),
                    _ => {}
                }
            }
            let b = 3;
            // one training pass gives the batch norms running statistics
            let warm = uniform(&[8, window, imu + bcs], r);
            model.forward(&warm, Mode::Train, r).map_err(|e| NnError::Hyper(e.to_string()))?;
            let x = uniform(&[b, window, imu + bcs], r);
            let t = targets(b, k, r);
            (Box::new(ModelObjective { model, targets: t, mode: Mode::Eval, seed }), x)
        }
        other => return Err(NnError::Hyper(format!("unknown gradcheck case {other}"))),
    })
}

/// Runs every case over `seeds` and keeps the worst error per case.
pub fn gradient_suite(seeds: &[u64], epsilon: f64) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut entries = Vec::new();
    for name in CASES {
        let mut entry = SuiteEntry {
            name,
            max_relative_error: 0.0,
            worst_location: String::new(),
            worst_seed: 0,
            checked: 0,
            skipped: 0,
            seeds: seeds.len(),
        };
        for &seed in seeds {
            let (mut target, x) = case(name, seed)?;
            let r = grad_check(target.as_mut(), &x, epsilon)
                .map_err(|e| NnError::NonFinite(format!("{name} seed {seed}: {e}")))?;
            entry.checked += r.checked;
            entry.skipped += r.skipped;
            if r.max_relative_error >= entry.max_relative_error {
                entry.max_relative_error = r.max_relative_error;
                entry.worst_location = r.worst_location;
                entry.worst_seed = seed;
            }
        }
        entries.push(entry);
    }
    Ok(SuiteReport { entries, elapsed_s: started.elapsed().as_secs_f64() })
}
