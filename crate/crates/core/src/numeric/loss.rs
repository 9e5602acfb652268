use super::{DenseMatrix, NumericError};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for row in out.as_mut_slice().chunks_exact_mut(logits.cols().max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the rows of `logits` and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    targets: &[usize],
) -> Result<(f64, DenseMatrix), NumericError> {
    let (n, classes) = logits.shape();
    if targets.len() != n {
        return Err(NumericError::ShapeMismatch {
            op: "softmax_cross_entropy",
            expected: (n, 1),
            found: (targets.len(), 1),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(NumericError::TargetOutOfRange {
            target: bad,
            classes,
        });
    }
    if n == 0 {
        return Ok((0.0, DenseMatrix::zeros(0, classes)));
    }
    let mut grad = DenseMatrix::zeros(n, classes);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for (i, (row, &target)) in logits.iter_rows().zip(targets).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[target] - max);
        let g = grad.row_mut(i);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = (v - max).exp() / sum * inv_n;
        }
        g[target] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, RngStream};

    #[test]
    fn symmetric_pair() {
        let logits = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = DenseMatrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.as_slice().iter().all(|g| g.is_finite()));

        let extreme = DenseMatrix::from_rows(&[vec![1e6, -1e6, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&extreme, &[1]).unwrap();
        assert!(loss.is_finite() && (loss - 2e6).abs() < 1.0);
        assert!(grad.as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn target_out_of_range() {
        let logits = DenseMatrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(NumericError::TargetOutOfRange { target: 3, classes: 3 })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RngStream::new(11, "ce-grad");
        let logits = DenseMatrix::from_fn(4, 7, |_, _| rng.normal(0.0, 2.0));
        let targets = [0, 3, 6, 2];
        let (_, analytic) = softmax_cross_entropy(&logits, &targets).unwrap();
        let numeric = finite_diff_grad(
            |z| softmax_cross_entropy(z, &targets).unwrap().0,
            &logits,
            1e-4,
        )
        .unwrap();
        assert!(analytic.max_abs_diff(&numeric) < 1e-5);
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngStream::new(3, "softmax");
        let z = DenseMatrix::from_fn(5, 9, |_, _| rng.normal(0.0, 30.0));
        for row in softmax_rows(&z).iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
