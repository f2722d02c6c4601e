//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{softmax_cross_entropy, Layer, Mode, NnError, Result};
use crate::tensor::Tensor;

/// Something with a scalar objective whose parameter and input gradients can be checked.
///
/// Implementations must be deterministic across calls: any dropout mask must be
/// drawn from a freshly seeded generator each time.
pub trait Differentiable {
    fn loss(&mut self, input: &Tensor) -> Result<f64>;
    /// Zeroes parameter gradients, then runs forward and backward. Returns the
    /// loss and the gradient with respect to `input`.
    fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Identifies the linear region (ReLU masks, pooling winners) of the most
    /// recent evaluation. Smooth objectives can keep the default.
    fn pattern(&self) -> u64 {
        0
    }
}

/// Hash of the piecewise-linear decisions cached in `layers`.
pub fn layer_pattern<'a>(layers: impl IntoIterator<Item = &'a Layer>) -> u64 {
    use std::hash::Hasher;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for l in layers {
        l.hash_pattern(&mut h);
    }
    h.finish()
}

/// Start steps tried per coordinate before it is reported as sitting on a kink.
const KINK_RETRIES: usize = 4;
const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_ROUNDS: usize = 10;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Where the worst disagreement occurred, e.g. `param 3[17]` or `input[5]`.
    pub worst_location: String,
    pub checked: usize,
    /// Coordinates sitting exactly on a kink, where no step stays in one linear region.
    pub skipped: usize,
}

impl GradCheckReport {
    fn record(&mut self, err: f64, location: String) {
        self.checked += 1;
        if err > self.max_relative_error || self.worst_location.is_empty() {
            self.max_relative_error = err;
            self.worst_location = location;
        }
    }
}

fn finite(v: f64, location: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NnError::NonFinite(location()))
    }
}

/// Ridders' extrapolation of central differences, starting from step `epsilon`
/// and shrinking it by `RIDDERS_SHRINK` per round. The tableau stops early once
/// an endpoint leaves the base linear region; if that happens before any
/// estimate exists, the start step is cut tenfold. `None` if it never settles.
fn central_difference(
    model: &mut dyn Differentiable,
    base: u64,
    epsilon: f64,
    mut eval: impl FnMut(&mut dyn Differentiable, f64) -> Result<f64>,
) -> Result<Option<f64>> {
    let mut diff = |model: &mut dyn Differentiable, h: f64| -> Result<Option<f64>> {
        let plus = eval(model, h)?;
        let same = model.pattern() == base;
        let minus = eval(model, -h)?;
        Ok((same && model.pattern() == base).then(|| (plus - minus) / (2.0 * h)))
    };
    let mut h = epsilon;
    for _ in 0..KINK_RETRIES {
        let Some(first) = diff(model, h)? else {
            h /= 10.0;
            continue;
        };
        let shrink2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
        let mut prev = vec![first];
        let (mut best, mut best_err) = (first, f64::INFINITY);
        for _ in 1..RIDDERS_ROUNDS {
            h /= RIDDERS_SHRINK;
            let Some(d) = diff(model, h)? else { break };
            let mut row = vec![d];
            let mut fac = shrink2;
            for j in 1..=prev.len() {
                let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
                fac *= shrink2;
                let err = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
                if err <= best_err {
                    (best, best_err) = (v, err);
                }
                row.push(v);
            }
            let diverging = (row[row.len() - 1] - prev[prev.len() - 1]).abs() >= 2.0 * best_err;
            prev = row;
            if diverging {
                break;
            }
        }
        return Ok(Some(best));
    }
    Ok(None)
}

/// Compares analytic gradients of every parameter and input element against
/// central differences with step `epsilon`.
pub fn grad_check(model: &mut dyn Differentiable, input: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    let (_, input_grad) = model.loss_and_grad(input)?;
    let base = model.pattern();
    let param_grads: Vec<Vec<f64>> = model
        .params_mut()
        .into_iter()
        .map(|p| p.grad().map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut report =
        GradCheckReport { max_relative_error: 0.0, worst_location: String::new(), checked: 0, skipped: 0 };

    for (pi, grads) in param_grads.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let analytic = finite(g, || format!("analytic param {pi}[{j}]"))?;
            let original = model.params_mut()[pi].data()[j];
            let numeric = central_difference(model, base, epsilon, |m, d| {
                m.params_mut()[pi].data_mut()[j] = original + d;
                let loss = m.loss(input);
                m.params_mut()[pi].data_mut()[j] = original;
                loss
            })?;
            match numeric {
                Some(n) => {
                    let n = finite(n, || format!("numeric param {pi}[{j}]"))?;
                    report.record(relative_error(analytic, n), format!("param {pi}[{j}]"));
                }
                None => report.skipped += 1,
            }
        }
    }

    let mut probe = input.clone_values();
    for j in 0..input.len() {
        let analytic = finite(input_grad.data()[j], || format!("analytic input[{j}]"))?;
        let original = probe.data()[j];
        let numeric = central_difference(model, base, epsilon, |m, d| {
            probe.data_mut()[j] = original + d;
            let loss = m.loss(&probe);
            probe.data_mut()[j] = original;
            loss
        })?;
        match numeric {
            Some(n) => {
                let n = finite(n, || format!("numeric input[{j}]"))?;
                report.record(relative_error(analytic, n), format!("input[{j}]"));
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Scalar objective applied to a network's final output.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Mean softmax cross-entropy against integer targets (output must be `[B×K]`).
    CrossEntropy(Vec<usize>),
    /// `Σ wᵢ·yᵢ` over the flattened output.
    Projection(Vec<f64>),
}

impl Objective {
    pub(crate) fn evaluate(&self, output: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            Objective::CrossEntropy(targets) => softmax_cross_entropy(output, targets),
            Objective::Projection(w) => {
                if w.len() != output.len() {
                    return Err(NnError::shape(
                        "projection objective",
                        format!("{} weights for output {:?}", w.len(), output.shape()),
                    ));
                }
                let loss = w.iter().zip(output.data()).map(|(a, b)| a * b).sum();
                Ok((loss, Tensor::from_parts(output.shape().to_vec(), w.clone())))
            }
        }
    }
}

/// A plain layer stack for checking. A rank-3 activation entering a `Dense`
/// layer is flattened to `[B × C·L]`.
pub struct LayerStack {
    pub layers: Vec<Layer>,
    pub objective: Objective,
    pub mode: Mode,
    /// Seed for dropout masks; reused on every evaluation.
    pub seed: u64,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, objective: Objective) -> Self {
        Self { layers, objective, mode: Mode::Train, seed: 0 }
    }

    fn run(&mut self, input: &Tensor) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x = input.clone_values();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            shapes.push(x.shape().to_vec());
            if matches!(layer, Layer::Dense(_)) && x.rank() == 3 {
                let b = x.shape()[0];
                let rest = x.len() / b;
                x = x.reshape(vec![b, rest])?;
            }
            x = layer.forward(&x, self.mode, &mut rng)?;
        }
        Ok((x, shapes))
    }
}

impl Differentiable for LayerStack {
    fn loss(&mut self, input: &Tensor) -> Result<f64> {
        let (out, _) = self.run(input)?;
        Ok(self.objective.evaluate(&out)?.0)
    }

    fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
        for l in &mut self.layers {
            l.zero_grad();
        }
        let (out, shapes) = self.run(input)?;
        let (loss, mut grad) = self.objective.evaluate(&out)?;
        for (layer, shape) in self.layers.iter_mut().zip(shapes).rev() {
            grad = layer.backward(&grad)?;
            if grad.shape() != shape.as_slice() {
                grad = grad.reshape(shape)?;
            }
        }
        Ok((loss, grad))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    fn pattern(&self) -> u64 {
        layer_pattern(&self.layers)
    }
}
