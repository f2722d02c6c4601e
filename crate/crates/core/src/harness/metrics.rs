use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::data::WindowDataset;
use crate::models::FusionModel;

/// `counts[i][j]` = windows of true label `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![vec![0; k]; k] }
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_labels()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// F1 of one label; 0 when precision or recall is undefined.
    pub fn f1(&self, i: usize) -> f64 {
        let tp = self.counts[i][i] as f64;
        let predicted = self.col_sum(i) as f64;
        let actual = self.row_sum(i) as f64;
        if tp == 0.0 || predicted == 0.0 || actual == 0.0 {
            return 0.0;
        }
        let (p, r) = (tp / predicted, tp / actual);
        2.0 * p * r / (p + r)
    }

    pub fn macro_f1(&self) -> f64 {
        (0..self.num_labels()).map(|i| self.f1(i)).sum::<f64>() / self.num_labels() as f64
    }

    /// `None` when the label never occurs in the ground truth.
    pub fn recall(&self, i: usize) -> Option<f64> {
        let actual = self.row_sum(i);
        (actual > 0).then(|| self.counts[i][i] as f64 / actual as f64)
    }

    /// Labels missing from both ground truth and predictions.
    pub fn absent_labels(&self) -> Vec<usize> {
        (0..self.num_labels()).filter(|&i| self.row_sum(i) == 0 && self.col_sum(i) == 0).collect()
    }

    pub fn metrics(&self, walking: Option<usize>) -> MetricTriplet {
        MetricTriplet {
            accuracy: self.accuracy(),
            macro_f1: self.macro_f1(),
            walking_recall: walking.and_then(|w| self.recall(w)),
        }
    }
}

/// Walking recall is absent when the scheme has no Walking label or the set has no Walking windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTriplet {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub walking_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricTriplet,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 256;

pub(crate) fn predict(model: &FusionModel, ds: &WindowDataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = model.infer(&ds.batch(chunk))?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks_exact(k).map(argmax));
    }
    Ok(out)
}

/// Eval-mode predictions on `ds` scored against its labels. Walking recall uses
/// the dataset label named "Walking", if any.
pub fn evaluate(model: &FusionModel, ds: &WindowDataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(HarnessError::EmptyDataset("test"));
    }
    let k = model.spec().num_labels;
    let truth = ds.targets();
    if let Some(&label) = truth.iter().find(|&&t| t >= k) {
        return Err(HarnessError::LabelOutOfRange { label, classes: k });
    }
    let predictions = predict(model, ds)?;
    let confusion = ConfusionMatrix::from_pairs(k, &truth, &predictions);
    let walking = ds.labels.iter().position(|l| l == "Walking");
    let warnings = confusion
        .absent_labels()
        .into_iter()
        .map(|i| {
            let name = ds.labels.get(i).map_or_else(|| i.to_string(), Clone::clone);
            format!("label {name} absent from ground truth and predictions; counted as F1 = 0")
        })
        .collect();
    Ok(Evaluation { metrics: confusion.metrics(walking), confusion, predictions, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_binary_example() {
        let cm = ConfusionMatrix { counts: vec![vec![8, 2], vec![3, 7]] };
        let m = cm.metrics(Some(0));
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        assert!((cm.f1(0) - 16.0 / 21.0).abs() < 1e-12);
        assert!((cm.f1(1) - 14.0 / 19.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.7494).abs() < 1e-4);
        assert_eq!(m.walking_recall, Some(0.8));
    }

    #[test]
    fn degenerate_predictor() {
        let truth = [0, 1, 2, 0];
        let cm = ConfusionMatrix::from_pairs(3, &truth, &[0; 4]);
        assert_eq!(cm.f1(1), 0.0);
        assert_eq!(cm.f1(2), 0.0);
        assert!((cm.macro_f1() - (2.0 * 0.5 / 1.5) / 3.0).abs() < 1e-12);
        assert_eq!(cm.recall(1), Some(0.0));
    }

    #[test]
    fn perfect_and_absent() {
        let cm = ConfusionMatrix::from_pairs(3, &[0, 1, 1], &[0, 1, 1]);
        assert_eq!(cm.accuracy(), 1.0);
        assert_eq!(cm.absent_labels(), vec![2]);
        assert_eq!(cm.metrics(Some(2)).walking_recall, None);
        assert_eq!(cm.metrics(None).walking_recall, None);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
        assert_eq!(argmax(&[-1.0, -1.0]), 0);
    }
}
