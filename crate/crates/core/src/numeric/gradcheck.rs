use super::{DenseMatrix, NumericError};

/// Central-difference gradient of a scalar field, one entry at a time.
pub fn finite_diff_grad(
    f: impl Fn(&DenseMatrix) -> f64,
    at: &DenseMatrix,
    h: f64,
) -> Result<DenseMatrix, NumericError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumericError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = at.clone();
    let mut grad = DenseMatrix::zeros(at.rows(), at.cols());
    for idx in 0..at.as_slice().len() {
        let x = at.as_slice()[idx];
        probe.as_mut_slice()[idx] = x + h;
        let plus = f(&probe);
        probe.as_mut_slice()[idx] = x - h;
        let minus = f(&probe);
        probe.as_mut_slice()[idx] = x;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(NumericError::NonFinite("finite_diff_grad"));
        }
        grad.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest entrywise `|a − b| / max(1, |a|, |b|)`.
///
/// The unit floor keeps near-zero entries from dominating; above unit scale
/// this is the plain relative error.
pub fn max_relative_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .fold(0.0, f64::max)
}
