use rand::{Rng, RngCore};

use super::gemm::{mm, mm_nt, mm_tn};
use super::{NnError, Result};
use crate::tensor::Tensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell state, each `[batch × hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Single-layer unidirectional LSTM over `[batch × time × features]`.
///
/// Gate rows in `weight_ih`, `weight_hh` and `bias` are stacked in the order
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    /// `[4H × F]`
    pub weight_ih: Tensor,
    /// `[4H × H]`
    pub weight_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
    cache: Option<LstmCache>,
}

#[derive(Clone, Debug)]
struct LstmCache {
    batch: usize,
    steps: usize,
    /// per step: `[B×F]` inputs
    xs: Vec<Vec<f64>>,
    /// per step: previous hidden and cell, `[B×H]`
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    /// per step: activated gates `[B×4H]`
    gates: Vec<Vec<f64>>,
    /// per step: tanh(c_t)
    tanh_c: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(features: usize, hidden: usize) -> Result<Self> {
        if features == 0 || hidden == 0 {
            return Err(NnError::Hyper(format!("lstm needs positive sizes, got F={features} H={hidden}")));
        }
        Ok(Self {
            weight_ih: Tensor::zeros(&[4 * hidden, features]),
            weight_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
            cache: None,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.weight_hh.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.weight_ih.shape()[1]
    }

    /// Uniform ±1/√H weights, zero biases except the forget gate at 1.
    pub fn init(&mut self, rng: &mut dyn RngCore) {
        let h = self.hidden_size();
        let bound = 1.0 / (h as f64).sqrt();
        for v in self.weight_ih.data_mut().iter_mut().chain(self.weight_hh.data_mut()) {
            *v = rng.random_range(-bound..bound);
        }
        let b = self.bias.data_mut();
        b.fill(0.0);
        b[h..2 * h].fill(1.0);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check(&self, x: &Tensor, state: Option<&LstmState>) -> Result<(usize, usize)> {
        x.expect_rank("lstm", 3)?;
        let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if t == 0 {
            return Err(NnError::EmptySequence);
        }
        if f != self.input_size() {
            return Err(NnError::shape("lstm", format!("feature size {f}, layer expects {}", self.input_size())));
        }
        if let Some(s) = state {
            let want = [b, self.hidden_size()];
            if s.h.shape() != want || s.c.shape() != want {
                return Err(NnError::shape(
                    "lstm",
                    format!("initial state {:?}/{:?}, expected {want:?}", s.h.shape(), s.c.shape()),
                ));
            }
        }
        Ok((b, t))
    }

    fn run(&self, x: &Tensor, state: Option<&LstmState>, keep: bool) -> Result<(Tensor, LstmState, Option<LstmCache>)> {
        let (batch, steps) = self.check(x, state)?;
        let (f, h) = (self.input_size(), self.hidden_size());
        let g4 = 4 * h;
        let mut h_cur = state.map_or_else(|| vec![0.0; batch * h], |s| s.h.data().to_vec());
        let mut c_cur = state.map_or_else(|| vec![0.0; batch * h], |s| s.c.data().to_vec());
        let mut out = vec![0.0; batch * steps * h];
        let mut cache = keep.then(|| LstmCache {
            batch,
            steps,
            xs: Vec::with_capacity(steps),
            h_prev: Vec::with_capacity(steps),
            c_prev: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
        });
        let mut xt = vec![0.0; batch * f];
        let mut z = vec![0.0; batch * g4];
        for t in 0..steps {
            for b in 0..batch {
                let src = &x.data()[(b * steps + t) * f..(b * steps + t + 1) * f];
                xt[b * f..(b + 1) * f].copy_from_slice(src);
            }
            for row in z.chunks_exact_mut(g4) {
                row.copy_from_slice(self.bias.data());
            }
            mm_nt(batch, f, g4, &xt, self.weight_ih.data(), &mut z, 1.0);
            mm_nt(batch, h, g4, &h_cur, self.weight_hh.data(), &mut z, 1.0);
            let c_old = c_cur.clone();
            let h_old = std::mem::take(&mut h_cur);
            h_cur = vec![0.0; batch * h];
            let mut tanh_c = vec![0.0; batch * h];
            for b in 0..batch {
                let zb = &mut z[b * g4..(b + 1) * g4];
                for j in 0..h {
                    let i_g = sigmoid(zb[j]);
                    let f_g = sigmoid(zb[h + j]);
                    let g_g = zb[2 * h + j].tanh();
                    let o_g = sigmoid(zb[3 * h + j]);
                    zb[j] = i_g;
                    zb[h + j] = f_g;
                    zb[2 * h + j] = g_g;
                    zb[3 * h + j] = o_g;
                    let c = f_g * c_old[b * h + j] + i_g * g_g;
                    let tc = c.tanh();
                    c_cur[b * h + j] = c;
                    tanh_c[b * h + j] = tc;
                    h_cur[b * h + j] = o_g * tc;
                }
                out[(b * steps + t) * h..(b * steps + t + 1) * h].copy_from_slice(&h_cur[b * h..(b + 1) * h]);
            }
            if let Some(cache) = cache.as_mut() {
                cache.xs.push(xt.clone());
                cache.h_prev.push(h_old);
                cache.c_prev.push(c_old);
                cache.gates.push(z.clone());
                cache.tanh_c.push(tanh_c);
            }
        }
        let state = LstmState {
            h: Tensor::from_parts(vec![batch, h], h_cur),
            c: Tensor::from_parts(vec![batch, h], c_cur),
        };
        Ok((Tensor::from_parts(vec![batch, steps, h], out), state, cache))
    }

    /// Runs the recurrence from `initial` (zeros when `None`), returning the hidden
    /// sequence `[B×T×H]` and the final state.
    pub fn forward_with_state(&mut self, x: &Tensor, initial: Option<&LstmState>) -> Result<(Tensor, LstmState)> {
        let (seq, state, cache) = self.run(x, initial, true)?;
        self.cache = cache;
        Ok((seq, state))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_state(x, None)?.0)
    }

    pub fn infer_with_state(&self, x: &Tensor, initial: Option<&LstmState>) -> Result<(Tensor, LstmState)> {
        let (seq, state, _) = self.run(x, initial, false)?;
        Ok((seq, state))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.infer_with_state(x, None)?.0)
    }

    /// Backpropagation through time from gradients on every hidden output.
    pub fn backward(&mut self, grad_seq: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("lstm"))?;
        let (batch, steps) = (cache.batch, cache.steps);
        let (f, h) = (self.input_size(), self.hidden_size());
        let g4 = 4 * h;
        if grad_seq.shape() != [batch, steps, h] {
            return Err(NnError::shape(
                "lstm backward",
                format!("gradient {:?} vs output [{batch}, {steps}, {h}]", grad_seq.shape()),
            ));
        }
        let mut dx = vec![0.0; batch * steps * f];
        let mut dw_ih = vec![0.0; g4 * f];
        let mut dw_hh = vec![0.0; g4 * h];
        let mut db = vec![0.0; g4];
        let mut dh_next = vec![0.0; batch * h];
        let mut dc_next = vec![0.0; batch * h];
        let mut dz = vec![0.0; batch * g4];
        let mut dxt = vec![0.0; batch * f];
        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let c_prev = &cache.c_prev[t];
            for b in 0..batch {
                for j in 0..h {
                    let k = b * h + j;
                    let gb = b * g4;
                    let (i_g, f_g, g_g, o_g) = (gates[gb + j], gates[gb + h + j], gates[gb + 2 * h + j], gates[gb + 3 * h + j]);
                    let dh = grad_seq.data()[(b * steps + t) * h + j] + dh_next[k];
                    let tc = tanh_c[k];
                    let dc = dc_next[k] + dh * o_g * (1.0 - tc * tc);
                    dz[gb + j] = dc * g_g * i_g * (1.0 - i_g);
                    dz[gb + h + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                    dz[gb + 2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dz[gb + 3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[k] = dc * f_g;
                }
            }
            mm_tn(g4, batch, f, &dz, &cache.xs[t], &mut dw_ih, 1.0);
            mm_tn(g4, batch, h, &dz, &cache.h_prev[t], &mut dw_hh, 1.0);
            for row in dz.chunks_exact(g4) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            mm(batch, g4, f, &dz, self.weight_ih.data(), &mut dxt, 0.0);
            for b in 0..batch {
                dx[(b * steps + t) * f..(b * steps + t + 1) * f].copy_from_slice(&dxt[b * f..(b + 1) * f]);
            }
            mm(batch, g4, h, &dz, self.weight_hh.data(), &mut dh_next, 0.0);
        }
        for (g, d) in self.weight_ih.grad_mut().iter_mut().zip(&dw_ih) {
            *g += d;
        }
        for (g, d) in self.weight_hh.grad_mut().iter_mut().zip(&dw_hh) {
            *g += d;
        }
        for (g, d) in self.bias.grad_mut().iter_mut().zip(&db) {
            *g += d;
        }
        Ok(Tensor::from_parts(vec![batch, steps, f], dx))
    }
}
