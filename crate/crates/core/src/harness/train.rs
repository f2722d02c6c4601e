use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::{HarnessError, MetricTriplet, Result};
use crate::data::WindowDataset;
use crate::models::FusionModel;
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation macro F1 gain above `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Drives batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, batch_size: 128, max_epochs: 200, patience: 20, min_delta: 1e-6, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy over training windows.
    pub train_loss: f64,
    pub val: MetricTriplet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct Trained {
    /// Parameters from the best validation epoch.
    pub model: FusionModel,
    pub history: History,
}

/// Adam over seeded shuffled batches (the last partial batch included), with
/// early stopping on validation macro F1.
pub fn train(mut model: FusionModel, train: &WindowDataset, val: &WindowDataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HarnessError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(HarnessError::EmptyDataset("validation"));
    }
    let k = model.spec().num_labels;
    let targets = train.targets();
    if let Some(&label) = targets.iter().chain(val.windows.iter().map(|w| &w.label)).find(|&&t| t >= k) {
        return Err(HarnessError::LabelOutOfRange { label, classes: k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() })?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History { epochs: Vec::new(), best_epoch: 0, best_val_macro_f1: f64::NEG_INFINITY, stopped_early: false };
    let mut best = model.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.batch(idx);
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train, &mut rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &t)?;
            if !loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
            loss_sum += loss * idx.len() as f64;
        }
        model.clear_cache();
        let val_metrics = evaluate(&model, val)?.metrics;
        let train_loss = loss_sum / train.len() as f64;
        log::debug!("epoch {epoch}: train loss {train_loss:.5}, val macro F1 {:.4}", val_metrics.macro_f1);
        history.epochs.push(EpochRecord { epoch, train_loss, val: val_metrics });

        if val_metrics.macro_f1 > history.best_val_macro_f1 + cfg.min_delta {
            history.best_val_macro_f1 = val_metrics.macro_f1;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(Trained { model: best, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Window;
    use crate::models::{build_model, Architecture, Fusion, ModelSpec};
    use crate::tensor::Tensor;
    use rand::Rng;

    /// Two labels separated by the sign of a constant offset on channel 0.
    fn separable(n: usize, seed: u64) -> WindowDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, c) = (25, 3);
        let windows = (0..n)
            .map(|i| {
                let label = i % 2;
                let shift = if label == 0 { -1.0 } else { 1.0 };
                let data = (0..w * c)
                    .map(|j| rng.random_range(-0.5..0.5) + if j % c == 0 { shift } else { 0.0 })
                    .collect();
                Window { data: Tensor::new(vec![w, c], data).unwrap(), label, session_id: "S1".into(), start_index: i }
            })
            .collect();
        WindowDataset {
            windows,
            window_len: w,
            step: 1,
            channel_layout: vec!["d/acc_x".into(), "d/acc_y".into(), "d/cap".into()],
            labels: vec!["Walking".into(), "NonWalking".into()],
            warnings: Vec::new(),
        }
    }

    fn model() -> FusionModel {
        let mut spec = ModelSpec::new(
            Architecture::McCnn,
            Fusion::EarlyData,
            2,
            25,
            &["d/acc_x".into(), "d/acc_y".into(), "d/cap".into()],
        );
        spec.hyper.filters = Some(vec![8, 8, 8]);
        spec.hyper.dense_hidden = 16;
        build_model(&spec).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig { learning_rate: 3e-3, batch_size: 16, max_epochs: 30, patience: 30, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn separable_set_is_learned() {
        // monitoring the training set itself makes the checkpoint track training accuracy
        let tr = separable(96, 1);
        let out = train(model(), &tr, &tr, &quick()).unwrap();
        assert!(out.history.best_epoch <= 30);
        assert!(evaluate(&out.model, &tr).unwrap().metrics.accuracy >= 0.99);
        let last = out.history.epochs.last().unwrap().val.macro_f1;
        assert!(out.history.best_val_macro_f1 >= last);
    }

    #[test]
    fn same_seed_is_bit_exact() {
        let (tr, va) = (separable(40, 1), separable(16, 2));
        let cfg = TrainConfig { max_epochs: 3, ..quick() };
        let a = train(model(), &tr, &va, &cfg).unwrap();
        let b = train(model(), &tr, &va, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        let flat = |m: &FusionModel| m.layers().flat_map(|l| l.params()).flat_map(|t| t.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a.model), flat(&b.model));
    }

    #[test]
    fn patience_one_stops_after_first_stall() {
        let (tr, va) = (separable(40, 1), separable(16, 2));
        let cfg = TrainConfig { patience: 1, max_epochs: 50, ..quick() };
        let out = train(model(), &tr, &va, &cfg).unwrap();
        let n = out.history.epochs.len();
        assert!(n < 50);
        assert_eq!(out.history.best_epoch, n - 1);
        assert!(TrainConfig { patience: 0, ..quick() }.validate().is_err());
    }

    #[test]
    fn exploding_rate_reports_location() {
        let (tr, va) = (separable(40, 1), separable(16, 2));
        let cfg = TrainConfig { learning_rate: 1e300, max_epochs: 5, ..quick() };
        match train(model(), &tr, &va, &cfg) {
            Err(HarnessError::NonFiniteLoss { epoch, batch }) => assert!(epoch >= 1 && batch >= 1),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }
}
