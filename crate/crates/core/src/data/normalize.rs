use serde::{Deserialize, Serialize};

use super::{DataError, Result, WindowDataset};

const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics, fitted on training windows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation over every sample of every window.
    pub fn fit(train: &WindowDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(DataError::Invalid("cannot fit a normalizer on an empty dataset".into()));
        }
        let c = train.num_channels();
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for w in &train.windows {
            for row in w.data.data().chunks_exact(c) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; c];
        for w in &train.windows {
            for row in w.data.data().chunks_exact(c) {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply_in_place(&self, ds: &mut WindowDataset) -> Result<()> {
        let c = self.mean.len();
        if ds.num_channels() != c {
            return Err(DataError::Invalid(format!(
                "normalizer fitted on {c} channels, dataset has {}",
                ds.num_channels()
            )));
        }
        for w in &mut ds.windows {
            for row in w.data.data_mut().chunks_exact_mut(c) {
                for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                    *v = (*v - m) / s;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, ds: &WindowDataset) -> Result<WindowDataset> {
        let mut out = ds.clone();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }
}
