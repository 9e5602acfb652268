use super::{DenseMatrix, NumericError, RngStream};

/// `n` i.i.d. rows from `N(mean, diag(var))`.
pub fn sample_diag_gaussian(
    mean: &[f64],
    var: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<DenseMatrix, NumericError> {
    if mean.len() != var.len() {
        return Err(NumericError::ShapeMismatch {
            op: "sample_diag_gaussian",
            expected: (1, mean.len()),
            found: (1, var.len()),
        });
    }
    if var.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
        return Err(NumericError::InvalidArgument(
            "variances must be finite and non-negative".into(),
        ));
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let d = mean.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (m, s) in mean.iter().zip(&std) {
            let z = rng.standard_normal();
            data.push(if *s == 0.0 { *m } else { m + s * z });
        }
    }
    DenseMatrix::from_vec(n, d, data)
}
