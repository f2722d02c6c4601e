use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::gemm::{mm, mm_nt, mm_tn};
use super::lstm::Lstm;
use super::{Mode, NnError, Result};
use crate::tensor::Tensor;

/// Output length of a valid (unpadded) 1-D convolution, `None` when the input is too short.
pub fn conv_output_len(len: usize, kernel_len: usize, stride: usize) -> Option<usize> {
    if kernel_len == 0 || stride == 0 || len < kernel_len {
        None
    } else {
        Some((len - kernel_len) / stride + 1)
    }
}

fn fan_in_uniform(t: &mut Tensor, fan_in: usize, rng: &mut dyn RngCore) {
    let bound = (3.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1D,
    BatchNorm1D,
    ReLU,
    MaxPool1D,
    Dropout,
    Dense,
    LSTM,
}

// ---------------------------------------------------------------------------
// Conv1D

/// Valid 1-D convolution over `[batch × channels × time]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    /// `[out_channels × in_channels × kernel_len]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    stride: usize,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel_len: usize, stride: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_len == 0 || stride == 0 {
            return Err(NnError::Hyper(format!(
                "conv1d needs positive sizes, got in={in_channels} out={out_channels} k={kernel_len} stride={stride}"
            )));
        }
        Ok(Self {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel_len]),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            cache: None,
        })
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        weight.expect_rank("Conv1d::from_weights", 3)?;
        if bias.shape() != [weight.shape()[0]] {
            return Err(NnError::shape(
                "Conv1d::from_weights",
                format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        if stride == 0 {
            return Err(NnError::Hyper("conv1d stride must be >= 1".into()));
        }
        Ok(Self { weight, bias, stride, cache: None })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn kernel_len(&self) -> usize {
        self.weight.shape()[2]
    }
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn init(&mut self, rng: &mut dyn RngCore) {
        let fan_in = self.in_channels() * self.kernel_len();
        fan_in_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().fill(0.0);
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        x.expect_rank("conv1d", 3)?;
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.in_channels() {
            return Err(NnError::shape(
                "conv1d",
                format!("input has {c} channels, layer expects {}", self.in_channels()),
            ));
        }
        let out_len = conv_output_len(l, self.kernel_len(), self.stride).ok_or_else(|| {
            NnError::shape(
                "conv1d",
                format!("input length {l} is shorter than kernel length {}", self.kernel_len()),
            )
        })?;
        Ok((b, l, out_len))
    }

    fn im2col(&self, x: &[f64], in_len: usize, out_len: usize, cols: &mut [f64]) {
        let (c_in, k_len, s) = (self.in_channels(), self.kernel_len(), self.stride);
        for c in 0..c_in {
            let row_in = &x[c * in_len..(c + 1) * in_len];
            for k in 0..k_len {
                let dst = &mut cols[(c * k_len + k) * out_len..(c * k_len + k + 1) * out_len];
                if s == 1 {
                    dst.copy_from_slice(&row_in[k..k + out_len]);
                } else {
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = row_in[t * s + k];
                    }
                }
            }
        }
    }

    fn compute(&self, x: &Tensor, keep_cols: bool) -> Result<(Tensor, Option<ConvCache>)> {
        let (batch, in_len, out_len) = self.check_input(x)?;
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let ck = c_in * self.kernel_len();
        let mut out = vec![0.0; batch * c_out * out_len];
        let mut all_cols = if keep_cols { vec![0.0; batch * ck * out_len] } else { Vec::new() };
        let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; ck * out_len] };
        for b in 0..batch {
            let xb = &x.data()[b * c_in * in_len..(b + 1) * c_in * in_len];
            let cols: &mut [f64] = if keep_cols {
                &mut all_cols[b * ck * out_len..(b + 1) * ck * out_len]
            } else {
                &mut scratch
            };
            self.im2col(xb, in_len, out_len, cols);
            let ob = &mut out[b * c_out * out_len..(b + 1) * c_out * out_len];
            mm(c_out, ck, out_len, self.weight.data(), cols, ob, 0.0);
            for (o, row) in ob.chunks_exact_mut(out_len).enumerate() {
                let bias = self.bias.data()[o];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        let cache = keep_cols.then_some(ConvCache { cols: all_cols, batch, in_len, out_len });
        Ok((Tensor::from_parts(vec![batch, c_out, out_len], out), cache))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = self.compute(x, true)?;
        self.cache = cache;
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x, false)?.0)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("conv1d"))?;
        let (batch, in_len, out_len) = (cache.batch, cache.in_len, cache.out_len);
        let (c_in, c_out, k_len, s) = (self.in_channels(), self.out_channels(), self.kernel_len(), self.stride);
        if grad_out.shape() != [batch, c_out, out_len] {
            return Err(NnError::shape(
                "conv1d backward",
                format!("gradient {:?} vs output [{batch}, {c_out}, {out_len}]", grad_out.shape()),
            ));
        }
        let ck = c_in * k_len;
        let mut dx = vec![0.0; batch * c_in * in_len];
        let mut dcols = vec![0.0; ck * out_len];
        let mut db = vec![0.0; c_out];
        let mut dw = vec![0.0; c_out * ck];
        for b in 0..batch {
            let gy = &grad_out.data()[b * c_out * out_len..(b + 1) * c_out * out_len];
            let cols = &cache.cols[b * ck * out_len..(b + 1) * ck * out_len];
            mm_nt(c_out, out_len, ck, gy, cols, &mut dw, 1.0);
            for (o, row) in gy.chunks_exact(out_len).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
            mm_tn(ck, c_out, out_len, self.weight.data(), gy, &mut dcols, 0.0);
            let dxb = &mut dx[b * c_in * in_len..(b + 1) * c_in * in_len];
            for c in 0..c_in {
                for k in 0..k_len {
                    let src = &dcols[(c * k_len + k) * out_len..(c * k_len + k + 1) * out_len];
                    let row = &mut dxb[c * in_len..(c + 1) * in_len];
                    for (t, g) in src.iter().enumerate() {
                        row[t * s + k] += g;
                    }
                }
            }
        }
        accumulate(self.weight.grad_mut(), &dw);
        accumulate(self.bias.grad_mut(), &db);
        Ok(Tensor::from_parts(vec![batch, c_in, in_len], dx))
    }
}

// ---------------------------------------------------------------------------
// BatchNorm1D

/// Per-channel batch normalization over `[batch × channels]` or `[batch × channels × time]`.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    eps: f64,
    momentum: f64,
    stats_ready: bool,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    batch_stats: bool,
}

/// `(batch, channels, time)` view of a rank-2 or rank-3 input.
fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[b, c] => Ok((b, c, 1)),
        &[b, c, l] => Ok((b, c, l)),
        s => Err(NnError::shape("batchnorm1d", format!("expected rank 2 or 3, got {s:?}"))),
    }
}

impl BatchNorm1d {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if channels == 0 {
            return Err(NnError::Hyper("batchnorm needs at least one channel".into()));
        }
        if !(eps > 0.0) {
            return Err(NnError::Hyper(format!("batchnorm epsilon must be > 0, got {eps}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(NnError::Hyper(format!("batchnorm momentum must be in [0, 1], got {momentum}")));
        }
        Ok(Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps,
            momentum,
            stats_ready: false,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn momentum(&self) -> f64 {
        self.momentum
    }
    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }
    pub(crate) fn set_stats_ready(&mut self, ready: bool) {
        self.stats_ready = ready;
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, l) = bn_dims(x)?;
        if c != self.channels() {
            return Err(NnError::shape(
                "batchnorm1d",
                format!("input has {c} channels, layer expects {}", self.channels()),
            ));
        }
        Ok((b, c, l))
    }

    /// Normalizes with the given per-channel statistics.
    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (b, c, l) = bn_dims(x).expect("checked");
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                let (g, be) = (self.gamma.data()[ci], self.beta.data()[ci]);
                for t in 0..l {
                    let h = (x.data()[off + t] - mean[ci]) * inv_std[ci];
                    xhat[off + t] = h;
                    y[off + t] = g * h + be;
                }
            }
        }
        (xhat, y)
    }

    fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (b, c, l) = bn_dims(x).expect("checked");
        let n = (b * l) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                mean[ci] += x.data()[off..off + l].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                var[ci] += x.data()[off..off + l].iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        (mean, var)
    }

    fn eval_inv_std(&self) -> Result<Vec<f64>> {
        if !self.stats_ready {
            return Err(NnError::NoRunningStats);
        }
        Ok(self.running_var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, _, l) = self.check(x)?;
        match mode {
            Mode::Train => {
                let (mean, var) = Self::batch_stats(x);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let (xhat, y) = self.normalize(x, &mean, &inv_std);
                let n = b * l;
                // Running variance tracks the unbiased estimate.
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let m = self.momentum;
                for (rm, mu) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *rm = (1.0 - m) * *rm + m * mu;
                }
                for (rv, v) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *rv = (1.0 - m) * *rv + m * v * unbias;
                }
                self.stats_ready = true;
                self.cache = Some(BnCache { xhat, inv_std, shape: x.shape().to_vec(), batch_stats: true });
                Ok(Tensor::from_parts(x.shape().to_vec(), y))
            }
            Mode::Eval => {
                let inv_std = self.eval_inv_std()?;
                let (xhat, y) = self.normalize(x, self.running_mean.data(), &inv_std);
                self.cache = Some(BnCache { xhat, inv_std, shape: x.shape().to_vec(), batch_stats: false });
                Ok(Tensor::from_parts(x.shape().to_vec(), y))
            }
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let inv_std = self.eval_inv_std()?;
        let (_, y) = self.normalize(x, self.running_mean.data(), &inv_std);
        Ok(Tensor::from_parts(x.shape().to_vec(), y))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("batchnorm1d"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(NnError::shape(
                "batchnorm1d backward",
                format!("gradient {:?} vs output {:?}", grad_out.shape(), cache.shape),
            ));
        }
        let (b, c, l) = bn_dims(grad_out)?;
        let n = (b * l) as f64;
        let dy = grad_out.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                for t in 0..l {
                    dgamma[ci] += dy[off + t] * cache.xhat[off + t];
                    dbeta[ci] += dy[off + t];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                let g = self.gamma.data()[ci];
                let inv = cache.inv_std[ci];
                for t in 0..l {
                    dx[off + t] = if cache.batch_stats {
                        // dbeta = Σdy and dgamma = Σdy·x̂ are exactly the two reductions needed.
                        g * inv / n * (n * dy[off + t] - dbeta[ci] - cache.xhat[off + t] * dgamma[ci])
                    } else {
                        g * inv * dy[off + t]
                    };
                }
            }
        }
        accumulate(self.gamma.grad_mut(), &dgamma);
        accumulate(self.beta.grad_mut(), &dbeta);
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), dx))
    }
}

// ---------------------------------------------------------------------------
// ReLU

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<(Vec<bool>, Vec<usize>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect()))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some((x.data().iter().map(|&v| v > 0.0).collect(), x.shape().to_vec()));
        self.infer(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (mask, shape) = self.mask.as_ref().ok_or(NnError::NoCache("relu"))?;
        if grad_out.shape() != shape.as_slice() {
            return Err(NnError::shape("relu backward", format!("{:?} vs {shape:?}", grad_out.shape())));
        }
        let dx = grad_out.data().iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
        Ok(Tensor::from_parts(shape.clone(), dx))
    }
}

// ---------------------------------------------------------------------------
// MaxPool1D

/// Non-overlapping max pooling along time; a trailing remainder shorter than the pool is dropped.
#[derive(Clone, Debug)]
pub struct MaxPool1d {
    pool: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(NnError::Hyper("pool length must be >= 1".into()));
        }
        Ok(Self { pool, cache: None })
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        x.expect_rank("maxpool1d", 3)?;
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let out_len = l / self.pool;
        if out_len == 0 {
            return Err(NnError::shape(
                "maxpool1d",
                format!("input length {l} is shorter than pool length {}", self.pool),
            ));
        }
        let mut out = Vec::with_capacity(b * c * out_len);
        let mut argmax = Vec::with_capacity(b * c * out_len);
        for row in 0..b * c {
            let base = row * l;
            for t in 0..out_len {
                let start = base + t * self.pool;
                let mut best = start;
                for i in start + 1..start + self.pool {
                    if x.data()[i] > x.data()[best] {
                        best = i;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
        Ok((Tensor::from_parts(vec![b, c, out_len], out), argmax))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, argmax) = self.compute(x)?;
        self.cache = Some((argmax, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (argmax, in_shape) = self.cache.as_ref().ok_or(NnError::NoCache("maxpool1d"))?;
        if grad_out.len() != argmax.len() {
            return Err(NnError::shape("maxpool1d backward", format!("gradient {:?}", grad_out.shape())));
        }
        let mut dx = vec![0.0; in_shape.iter().product()];
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            dx[i] += g;
        }
        Ok(Tensor::from_parts(in_shape.clone(), dx))
    }
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: survivors are scaled by `1/(1-p)` in Train, identity in Eval.
#[derive(Clone, Debug)]
pub struct Dropout {
    p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Hyper(format!("dropout probability must be in [0, 1), got {p}")));
        }
        Ok(Self { p, mask: None })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone_values());
        }
        let scale = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { scale })
            .collect();
        let y = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Ok(Tensor::from_parts(x.shape().to_vec(), y))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(grad_out.clone_values()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(NnError::shape("dropout backward", format!("gradient {:?}", grad_out.shape())));
                }
                let dx = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Ok(Tensor::from_parts(grad_out.shape().to_vec(), dx))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense

/// Fully connected layer `y = x·Wᵀ + b` over `[batch × in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    /// `[out × in]`
    pub weight: Tensor,
    pub bias: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::Hyper(format!("dense needs positive sizes, got {inputs}->{outputs}")));
        }
        Ok(Self { weight: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]), input: None })
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        weight.expect_rank("Dense::from_weights", 2)?;
        if bias.shape() != [weight.shape()[0]] {
            return Err(NnError::shape(
                "Dense::from_weights",
                format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        Ok(Self { weight, bias, input: None })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn init(&mut self, rng: &mut dyn RngCore) {
        let fan_in = self.inputs();
        fan_in_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().fill(0.0);
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank("dense", 2)?;
        let (b, n_in) = (x.shape()[0], x.shape()[1]);
        if n_in != self.inputs() {
            return Err(NnError::shape("dense", format!("input width {n_in}, layer expects {}", self.inputs())));
        }
        let n_out = self.outputs();
        let mut y = vec![0.0; b * n_out];
        mm_nt(b, n_in, n_out, x.data(), self.weight.data(), &mut y, 0.0);
        for row in y.chunks_exact_mut(n_out) {
            accumulate(row, self.bias.data());
        }
        Ok(Tensor::from_parts(vec![b, n_out], y))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone_values());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NoCache("dense"))?;
        let (b, n_in, n_out) = (x.shape()[0], self.inputs(), self.outputs());
        if grad_out.shape() != [b, n_out] {
            return Err(NnError::shape("dense backward", format!("gradient {:?} vs [{b}, {n_out}]", grad_out.shape())));
        }
        let gy = grad_out.data();
        let mut dw = vec![0.0; n_out * n_in];
        mm_tn(n_out, b, n_in, gy, x.data(), &mut dw, 0.0);
        let mut db = vec![0.0; n_out];
        for row in gy.chunks_exact(n_out) {
            accumulate(&mut db, row);
        }
        let mut dx = vec![0.0; b * n_in];
        mm(b, n_out, n_in, gy, self.weight.data(), &mut dx, 0.0);
        accumulate(self.weight.grad_mut(), &dw);
        accumulate(self.bias.grad_mut(), &db);
        Ok(Tensor::from_parts(vec![b, n_in], dx))
    }
}

impl Tensor {
    /// Copy of the values without the gradient buffer.
    pub fn clone_values(&self) -> Tensor {
        Tensor::from_parts(self.shape().to_vec(), self.data().to_vec())
    }
}

// ---------------------------------------------------------------------------
// Layer

/// One layer of a network together with its forward cache.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv1d(Conv1d),
    BatchNorm1d(BatchNorm1d),
    Relu(Relu),
    MaxPool1d(MaxPool1d),
    Dropout(Dropout),
    Dense(Dense),
    Lstm(Lstm),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d(_) => LayerKind::Conv1D,
            Layer::BatchNorm1d(_) => LayerKind::BatchNorm1D,
            Layer::Relu(_) => LayerKind::ReLU,
            Layer::MaxPool1d(_) => LayerKind::MaxPool1D,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Lstm(_) => LayerKind::LSTM,
        }
    }

    /// Runs the layer and caches what `backward` needs. Eval mode never touches
    /// parameters or running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.forward(x),
            Layer::BatchNorm1d(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool1d(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode, rng),
            Layer::Dense(l) => l.forward(x),
            Layer::Lstm(l) => l.forward(x),
        }
    }

    /// Eval-mode forward through a shared reference, without caching.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.infer(x),
            Layer::BatchNorm1d(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::MaxPool1d(l) => l.infer(x),
            Layer::Dropout(_) => Ok(x.clone_values()),
            Layer::Dense(l) => l.infer(x),
            Layer::Lstm(l) => l.infer(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.backward(grad_out),
            Layer::BatchNorm1d(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::MaxPool1d(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Lstm(l) => l.backward(grad_out),
        }
    }

    pub fn init(&mut self, rng: &mut dyn RngCore) {
        match self {
            Layer::Conv1d(l) => l.init(rng),
            Layer::Dense(l) => l.init(rng),
            Layer::Lstm(l) => l.init(rng),
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv1d(l) => l.cache = None,
            Layer::BatchNorm1d(l) => l.cache = None,
            Layer::Relu(l) => l.mask = None,
            Layer::MaxPool1d(l) => l.cache = None,
            Layer::Dropout(l) => l.mask = None,
            Layer::Dense(l) => l.input = None,
            Layer::Lstm(l) => l.clear_cache(),
        }
    }

    /// Every stored tensor in serialization order, flagged trainable or buffer.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor, bool)> {
        match self {
            Layer::Conv1d(l) => vec![("weight", &l.weight, true), ("bias", &l.bias, true)],
            Layer::BatchNorm1d(l) => vec![
                ("gamma", &l.gamma, true),
                ("beta", &l.beta, true),
                ("running_mean", &l.running_mean, false),
                ("running_var", &l.running_var, false),
            ],
            Layer::Dense(l) => vec![("weight", &l.weight, true), ("bias", &l.bias, true)],
            Layer::Lstm(l) => vec![
                ("weight_ih", &l.weight_ih, true),
                ("weight_hh", &l.weight_hh, true),
                ("bias", &l.bias, true),
            ],
            Layer::Relu(_) | Layer::MaxPool1d(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor, bool)> {
        match self {
            Layer::Conv1d(l) => vec![("weight", &mut l.weight, true), ("bias", &mut l.bias, true)],
            Layer::BatchNorm1d(l) => vec![
                ("gamma", &mut l.gamma, true),
                ("beta", &mut l.beta, true),
                ("running_mean", &mut l.running_mean, false),
                ("running_var", &mut l.running_var, false),
            ],
            Layer::Dense(l) => vec![("weight", &mut l.weight, true), ("bias", &mut l.bias, true)],
            Layer::Lstm(l) => vec![
                ("weight_ih", &mut l.weight_ih, true),
                ("weight_hh", &mut l.weight_hh, true),
                ("bias", &mut l.bias, true),
            ],
            Layer::Relu(_) | Layer::MaxPool1d(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    /// Trainable parameters only.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut().into_iter().filter(|(_, _, trainable)| *trainable).map(|(_, t, _)| t).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.tensors().into_iter().filter(|(_, _, trainable)| *trainable).map(|(_, t, _)| t).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Feeds the last forward pass's ReLU masks and pooling winners to `state`.
    pub(crate) fn hash_pattern(&self, state: &mut impl std::hash::Hasher) {
        use std::hash::Hash;
        match self {
            Layer::Relu(l) => l.mask.as_ref().map(|m| &m.0).hash(state),
            Layer::MaxPool1d(l) => l.cache.as_ref().map(|c| &c.0).hash(state),
            _ => {}
        }
    }

    /// Kind-specific settings, as written to the parameter manifest.
    pub fn hyper(&self) -> Value {
        match self {
            Layer::Conv1d(l) => json!({ "stride": l.stride }),
            Layer::BatchNorm1d(l) => json!({ "eps": l.eps, "momentum": l.momentum, "stats_ready": l.stats_ready }),
            Layer::Relu(_) => json!({}),
            Layer::MaxPool1d(l) => json!({ "pool": l.pool }),
            Layer::Dropout(l) => json!({ "p": l.p }),
            Layer::Dense(_) => json!({}),
            Layer::Lstm(l) => json!({ "hidden": l.hidden_size() }),
        }
    }
}
