use super::{NnError, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `[B×K]` logits with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank("softmax", 2)?;
    let k = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/B`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank("softmax_cross_entropy", 2)?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != b {
        return Err(NnError::shape(
            "softmax_cross_entropy",
            format!("{} targets for a batch of {b}", targets.len()),
        ));
    }
    if let Some((row, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(NnError::TargetOutOfRange { row, target, classes: k });
    }
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for (r, (row, &target)) in logits.data().chunks_exact(k).zip(targets).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[target];
        let g = &mut grad[r * k..(r + 1) * k];
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() / b as f64;
        }
        g[target] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, Tensor::from_parts(vec![b, k], grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::filled(&[3, 12], 0.7);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 5, 11]).unwrap();
        assert!((loss - 12f64.ln()).abs() < 1e-12);
        assert!((loss - 2.4849).abs() < 1e-4);
        for row in grad.data().chunks(12) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_correct_prediction() {
        let mut data = vec![0.0; 4];
        data[2] = 1000.0;
        let logits = Tensor::new(vec![1, 4], data).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn hand_computed_two_by_three() {
        // row 0: logits [1, 2, 3], target 2; row 1: [0, 0, ln 2], target 0
        let logits = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 2f64.ln()]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        // row 0: Z = e + e² + e³, p = [e, e², e³]/Z
        let e = std::f64::consts::E;
        let z0 = e + e * e + e * e * e;
        let p0 = [e / z0, e * e / z0, e * e * e / z0];
        // row 1: exp = [1, 1, 2], Z = 4, p = [0.25, 0.25, 0.5]
        let p1: [f64; 3] = [0.25, 0.25, 0.5];
        let want_loss = (-(p0[2]).ln() - p1[0].ln()) / 2.0;
        assert!((loss - want_loss).abs() < 1e-14);
        let want_grad = [
            p0[0] / 2.0, p0[1] / 2.0, (p0[2] - 1.0) / 2.0,
            (p1[0] - 1.0) / 2.0, p1[1] / 2.0, p1[2] / 2.0,
        ];
        for (g, w) in grad.data().iter().zip(want_grad) {
            assert!((g - w).abs() < 1e-15);
        }
        // row 1 in closed form
        assert!((grad.data()[3] + 0.375).abs() < 1e-15);
    }

    #[test]
    fn target_out_of_range_rejected() {
        let logits = Tensor::zeros(&[2, 3]);
        let err = softmax_cross_entropy(&logits, &[0, 3]).unwrap_err();
        assert!(matches!(err, NnError::TargetOutOfRange { row: 1, target: 3, classes: 3 }));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::new(vec![2, 2], vec![-800.0, 800.0, 1.0, 1.0]).unwrap();
        let p = softmax(&logits).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.5, 0.5]);
    }
}
