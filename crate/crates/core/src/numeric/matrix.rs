//! Row-major dense matrix of `f64`.
//!
//! Every constructor rejects non-finite entries, and the arithmetic used by the
//! training loops is restricted to the handful of products the models need.

use serde::{Deserialize, Serialize};

use super::NumericError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::ShapeMismatch {
                op: "from_vec",
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite("from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericError::ShapeMismatch {
                    op: "from_rows",
                    expected: (rows.len(), cols),
                    found: (rows.len(), row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Builds a matrix from a generator; the generator must produce finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_block(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column block out of range");
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for row in self.iter_rows() {
            data.extend_from_slice(&row[start..end]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Stacks matrices with identical column counts on top of each other.
    pub fn vstack(parts: &[&DenseMatrix]) -> Result<Self, NumericError> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(NumericError::ShapeMismatch {
                    op: "vstack",
                    expected: (m.rows, cols),
                    found: m.shape(),
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<Self, NumericError> {
        if self.cols != other.cols {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_t",
                expected: (other.rows, self.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
        );
        out.check_finite("matmul_t")?;
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<Self, NumericError> {
        if self.rows != other.rows {
            return Err(NumericError::ShapeMismatch {
                op: "t_matmul",
                expected: (self.rows, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        out.check_finite("t_matmul")?;
        Ok(out)
    }

    /// Adds `bias[j]` to every entry of column `j`.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<(), NumericError> {
        if bias.len() != self.cols {
            return Err(NumericError::ShapeMismatch {
                op: "add_row_vector",
                expected: (1, self.cols),
                found: (1, bias.len()),
            });
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.check_finite("add_row_vector")
    }

    /// Column sums, i.e. `1ᵀ · self`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<(), NumericError> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.check_finite("add_assign")
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn same_shape(&self, other: &DenseMatrix, op: &'static str) -> Result<(), NumericError> {
        if self.shape() != other.shape() {
            return Err(NumericError::ShapeMismatch {
                op,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<(), NumericError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NumericError::NonFinite(op))
        }
    }
}

/// `c = a · b` for strided operands, `c` contiguous `m × n` and zeroed.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides describe views that lie entirely inside the borrowed
    // slices (checked by the callers' shape tests), and `c` is an exclusive
    // contiguous buffer of `m * n` elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
