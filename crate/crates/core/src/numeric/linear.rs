use serde::{Deserialize, Serialize};

use super::{DenseMatrix, NumericError, RngStream};

/// Affine map `x ↦ W x + b` applied row-wise, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    /// `1 × out`
    pub bias: DenseMatrix,
}

pub struct LinearGrads {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
    pub input: DenseMatrix,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(outputs, inputs),
            bias: DenseMatrix::zeros(1, outputs),
        }
    }

    /// Weights `N(0, weight_std²)`, bias `N(0, bias_std²)`.
    pub fn random(inputs: usize, outputs: usize, weight_std: f64, bias_std: f64, rng: &mut RngStream) -> Self {
        Self {
            weight: DenseMatrix::from_fn(outputs, inputs, |_, _| rng.normal(0.0, weight_std)),
            bias: DenseMatrix::from_fn(1, outputs, |_, _| rng.normal(0.0, bias_std)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix, NumericError> {
        let mut out = x.matmul_t(&self.weight)?;
        out.add_row_vector(self.bias.as_slice())?;
        Ok(out)
    }

    /// Gradients given the input batch and `∂L/∂output`.
    pub fn backward(&self, x: &DenseMatrix, d_out: &DenseMatrix) -> Result<LinearGrads, NumericError> {
        Ok(LinearGrads {
            weight: d_out.t_matmul(x)?,
            bias: DenseMatrix::from_vec(1, d_out.cols(), d_out.column_sums())?,
            input: d_out.matmul(&self.weight)?,
        })
    }
}
