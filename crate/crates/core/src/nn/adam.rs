use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates mirroring each parameter tensor, plus the update counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let c = &config;
        if !(c.learning_rate > 0.0) || !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.epsilon > 0.0) {
            return Err(NnError::Hyper(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self { config, state: AdamState::default() })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Applies one update using each parameter's gradient buffer (absent = zero).
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.state.step_count == 0 && self.state.first_moment.is_empty() {
            self.state.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.state.second_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if params.len() != self.state.first_moment.len() {
            return Err(NnError::shape(
                "adam_step",
                format!("{} parameter tensors, optimizer tracks {}", params.len(), self.state.first_moment.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.state.first_moment[i].shape() {
                return Err(NnError::shape(
                    "adam_step",
                    format!("parameter {i} has shape {:?}, moments {:?}", p.shape(), self.state.first_moment[i].shape()),
                ));
            }
        }
        self.state.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.state.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.state.first_moment[i].data_mut();
            let v = self.state.second_moment[i].data_mut();
            let grad = p.grad().map(<[f64]>::to_vec);
            let values = p.data_mut();
            for j in 0..values.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                values[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Tensor {
        let mut t = Tensor::new(vec![values.len()], values.to_vec()).unwrap();
        t.grad_mut().copy_from_slice(grads);
        t
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut p = param(&[0.5, 0.5, 0.5], &[3.0, -0.002, 1e4]);
        adam.step(&mut [&mut p]).unwrap();
        for (v, sign) in p.data().iter().zip([1.0, -1.0, 1.0]) {
            assert!((0.5 - v - sign * 1e-4).abs() < 1e-9, "{v}");
        }
        assert_eq!(adam.state().step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut p = param(&[1.25], &[0.0]);
        adam.step(&mut [&mut p]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.25]);
        assert_eq!(adam.state().step_count, 2);
    }

    #[test]
    fn two_step_trace() {
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg).unwrap();
        let mut p = param(&[0.0], &[1.0]);
        adam.step(&mut [&mut p]).unwrap();
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1
        let after1 = -0.01 / (1.0 + 1e-8);
        assert!((p.data()[0] - after1).abs() < 1e-17);
        p.grad_mut()[0] = -1.0;
        adam.step(&mut [&mut p]).unwrap();
        // m = 0.09 - 0.1 = -0.01, m̂ = -0.01 / 0.19 = -1/19
        // v = 0.000999 + 0.001 = 0.001999, v̂ = 0.001999 / 0.001999 = 1
        let after2 = after1 + 0.01 * (1.0 / 19.0) / (1.0 + 1e-8);
        assert!((p.data()[0] - after2).abs() < 1e-15, "{} vs {after2}", p.data()[0]);
        assert!((adam.state().first_moment[0].data()[0] + 0.01).abs() < 1e-15);
        assert!((adam.state().second_moment[0].data()[0] - 0.001999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_scale_covariant() {
        let grads = [0.3, -0.7, 2.0];
        let mut a = param(&[0.0; 3], &grads);
        let scaled: Vec<f64> = grads.iter().map(|g| g * 1000.0).collect();
        let mut b = param(&[0.0; 3], &scaled);
        Adam::new(AdamConfig::default()).unwrap().step(&mut [&mut a]).unwrap();
        Adam::new(AdamConfig::default()).unwrap().step(&mut [&mut b]).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut p = param(&[0.0, 0.0], &[1.0, 1.0]);
        adam.step(&mut [&mut p]).unwrap();
        let mut q = param(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        assert!(adam.step(&mut [&mut q]).is_err());
        assert!(adam.step(&mut [&mut p, &mut q]).is_err());
    }
}
