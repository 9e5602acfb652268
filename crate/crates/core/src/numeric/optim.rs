use serde::{Deserialize, Serialize};

use super::{DenseMatrix, NumericError};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state for a fixed, ordered set of parameter matrices.
#[derive(Debug, Clone)]
pub struct OptimState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self, NumericError> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(NumericError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self, NumericError> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self, NumericError> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    ///
    /// The parameter list must keep the same order and shapes across calls;
    /// Adam moments are allocated lazily on the first step.
    pub fn step(
        &mut self,
        params: &mut [&mut DenseMatrix],
        grads: &[&DenseMatrix],
    ) -> Result<(), NumericError> {
        if params.len() != grads.len() {
            return Err(NumericError::ShapeMismatch {
                op: "optimizer_step",
                expected: (params.len(), 1),
                found: (grads.len(), 1),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "optimizer_step")?;
            g.check_finite("optimizer_step")?;
        }
        if self.kind == OptimizerKind::Adam {
            if self.first_moment.is_empty() {
                self.first_moment = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
                self.second_moment = self.first_moment.clone();
            } else if self.first_moment.len() != params.len()
                || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
            {
                return Err(NumericError::InvalidArgument(
                    "parameter set changed between optimizer steps".into(),
                ));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bias1 = 1.0 - BETA1.powi(t);
                let bias2 = 1.0 - BETA2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                {
                    let moments = m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut());
                    for ((pv, gv), (mv, vv)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(moments) {
                        *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                        *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
        for p in params.iter() {
            p.check_finite("optimizer_step")?;
        }
        Ok(())
    }
}
