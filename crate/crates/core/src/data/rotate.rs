use super::{DataError, LabeledDataset};
use crate::numeric::DenseMatrix;

/// Counter-clockwise quarter turns: `out[i][j] = in[j][n-1-i]`, applied `k`
/// times.
pub fn rotate90(image: &[f64], rows: usize, cols: usize, k: usize) -> Result<Vec<f64>, DataError> {
    if rows != cols {
        return Err(DataError::NonSquare { rows, cols });
    }
    assert_eq!(image.len(), rows * cols, "image buffer does not match shape");
    let n = rows;
    let mut cur = image.to_vec();
    let mut next = vec![0.0; n * n];
    for _ in 0..k % 4 {
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = cur[j * n + (n - 1 - i)];
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Every input image of `dataset` rotated by `k` quarter turns.
pub fn rotate_inputs(dataset: &LabeledDataset, k: usize) -> Result<DenseMatrix, DataError> {
    let (rows, cols) = dataset.image_shape().ok_or(DataError::NotImages)?;
    if rows != cols {
        return Err(DataError::NonSquare { rows, cols });
    }
    let mut data = Vec::with_capacity(dataset.inputs().as_slice().len());
    for row in dataset.inputs().iter_rows() {
        data.extend(rotate90(row, rows, cols, k)?);
    }
    Ok(DenseMatrix::from_vec(dataset.len(), rows * cols, data)?)
}
