//! Fusion of the per-subspace classifier outputs into one prediction.
//!
//! All strategies work on a [`ScoreStack`]: one `n × C` score matrix per
//! subspace, over the same ordered class set, split into per-task column
//! ranges. A fused score for task block `t` is a mean of the subspace blocks
//! `Z_{k,t}`; the strategies differ only in which `k` take part.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{ClassifierError, TaskHead};
use crate::numeric::{argmax, DenseMatrix};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("score stack is empty")]
    Empty,
    #[error("score matrix {subspace} has shape {found:?}, expected {expected:?}")]
    Shape {
        subspace: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("task ranges do not tile 0..{classes} in order")]
    Ranges { classes: usize },
    #[error("stack has {subspaces} subspaces but {tasks} tasks")]
    Incomplete { subspaces: usize, tasks: usize },
    #[error("subspace limit must be at least 1")]
    ZeroLimit,
    #[error("need one head per task: {heads} heads, {features} feature sets")]
    MissingHead { heads: usize, features: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Which subspaces feed each task block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Subspaces `0..=t` for block `t`.
    Expertise,
    /// Every subspace for every block.
    All,
    /// Subspace 0 alone.
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStack {
    scores: Vec<DenseMatrix>,
    ranges: Vec<Range<usize>>,
}

impl ScoreStack {
    pub fn new(scores: Vec<DenseMatrix>, ranges: Vec<Range<usize>>) -> Result<Self, EnsembleError> {
        let first = scores.first().ok_or(EnsembleError::Empty)?;
        let expected = first.shape();
        for (subspace, z) in scores.iter().enumerate() {
            if z.shape() != expected {
                return Err(EnsembleError::Shape {
                    subspace,
                    expected,
                    found: z.shape(),
                });
            }
        }
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(EnsembleError::Ranges { classes: expected.1 });
            }
            next = r.end;
        }
        if next != expected.1 || ranges.is_empty() {
            return Err(EnsembleError::Ranges { classes: expected.1 });
        }
        Ok(Self { scores, ranges })
    }

    pub fn subspaces(&self) -> usize {
        self.scores.len()
    }

    pub fn tasks(&self) -> usize {
        self.ranges.len()
    }

    pub fn rows(&self) -> usize {
        self.scores[0].rows()
    }

    pub fn scores(&self) -> &[DenseMatrix] {
        &self.scores
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    fn require_complete(&self) -> Result<(), EnsembleError> {
        if self.subspaces() < self.tasks() {
            return Err(EnsembleError::Incomplete {
                subspaces: self.subspaces(),
                tasks: self.tasks(),
            });
        }
        Ok(())
    }

    /// Block `t` of the fused matrix is the mean of `Z_{k,t}` over
    /// `members(t)`.
    fn fuse(&self, members: impl Fn(usize) -> Range<usize>) -> DenseMatrix {
        let (n, c) = self.scores[0].shape();
        let mut out = DenseMatrix::zeros(n, c);
        for (t, range) in self.ranges.iter().enumerate() {
            let ks = members(t);
            let weight = 1.0 / ks.len() as f64;
            for k in ks {
                let z = &self.scores[k];
                for i in 0..n {
                    let (src, dst) = (&z.row(i)[range.clone()], &mut out.row_mut(i)[range.clone()]);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            for i in 0..n {
                for v in &mut out.row_mut(i)[range.clone()] {
                    *v *= weight;
                }
            }
        }
        out
    }

    /// Fused scores under `rule`.
    pub fn fused(&self, rule: FusionRule) -> Result<DenseMatrix, EnsembleError> {
        match rule {
            FusionRule::Expertise => self.fused_limited(self.tasks()),
            FusionRule::All => {
                self.require_complete()?;
                let k = self.subspaces();
                Ok(self.fuse(|_| 0..k))
            }
            FusionRule::First => Ok(self.scores[0].clone()),
        }
    }

    /// Expertise fusion using at most the first `limit` subspaces: block `t`
    /// averages `Z_{k,t}` for `k < min(t + 1, limit)`.
    pub fn fused_limited(&self, limit: usize) -> Result<DenseMatrix, EnsembleError> {
        if limit == 0 {
            return Err(EnsembleError::ZeroLimit);
        }
        self.require_complete()?;
        Ok(self.fuse(|t| 0..(t + 1).min(limit)))
    }
}

/// Row-wise argmax, ties to the lowest column.
pub fn argmax_rows(scores: &DenseMatrix) -> Vec<usize> {
    scores.iter_rows().map(argmax).collect()
}

/// Adaptive expertise ensemble: fused scores and predicted labels.
pub fn aee_predict(stack: &ScoreStack) -> Result<(DenseMatrix, Vec<usize>), EnsembleError> {
    let s = stack.fused(FusionRule::Expertise)?;
    let p = argmax_rows(&s);
    Ok((s, p))
}

/// The expertise ensemble restricted to subspaces `0..limit`.
pub fn aee_predict_limited(stack: &ScoreStack, limit: usize) -> Result<Vec<usize>, EnsembleError> {
    Ok(argmax_rows(&stack.fused_limited(limit)?))
}

pub fn simple_ensemble_predict(stack: &ScoreStack) -> Result<Vec<usize>, EnsembleError> {
    Ok(argmax_rows(&stack.fused(FusionRule::All)?))
}

pub fn no_ensemble_predict(stack: &ScoreStack) -> Result<Vec<usize>, EnsembleError> {
    Ok(argmax_rows(&stack.fused(FusionRule::First)?))
}

/// Concatenates each task head's raw logits (head `t` evaluated on
/// `features[t]`) and takes the argmax.
pub fn misaligned_predict(heads: &[TaskHead], features: &[&DenseMatrix]) -> Result<Vec<usize>, EnsembleError> {
    if heads.is_empty() || heads.len() != features.len() {
        return Err(EnsembleError::MissingHead {
            heads: heads.len(),
            features: features.len(),
        });
    }
    let blocks = heads
        .iter()
        .zip(features)
        .map(|(h, x)| h.logits(x))
        .collect::<Result<Vec<_>, _>>()?;
    let n = blocks[0].rows();
    let mut preds = Vec::with_capacity(n);
    let mut row = Vec::new();
    for i in 0..n {
        row.clear();
        for b in &blocks {
            row.extend_from_slice(b.row(i));
        }
        preds.push(argmax(&row));
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    fn m(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn random_stack(n: usize, sizes: &[usize], k: usize, rng: &mut RngStream) -> ScoreStack {
        let c: usize = sizes.iter().sum();
        let mut ranges = Vec::new();
        let mut start = 0;
        for &s in sizes {
            ranges.push(start..start + s);
            start += s;
        }
        let scores = (0..k).map(|_| DenseMatrix::from_fn(n, c, |_, _| rng.uniform())).collect();
        ScoreStack::new(scores, ranges).unwrap()
    }

    #[test]
    fn two_task_mean() {
        // Task 0 has one class, task 1 has two.
        let z0 = m(&[vec![0.0, 0.2, 0.8]]);
        let z1 = m(&[vec![0.0, 0.6, 0.4]]);
        let stack = ScoreStack::new(vec![z0, z1], vec![0..1, 1..3]).unwrap();
        let (s, p) = aee_predict(&stack).unwrap();
        // 0.8 + 0.4 is not representable exactly, so allow one rounding step.
        for (got, want) in s.row(0)[1..3].iter().zip([0.4, 0.6]) {
            assert!((got - want).abs() <= f64::EPSILON, "{got} vs {want}");
        }
        assert_eq!(p, vec![2]);
    }

    #[test]
    fn later_subspaces_never_touch_earlier_blocks() {
        let mut rng = RngStream::new(7, "aee");
        let stack = random_stack(30, &[3, 4, 2], 3, &mut rng);
        let (base, preds) = aee_predict(&stack).unwrap();
        let mut scores = stack.scores().to_vec();
        for (k, z) in scores.iter_mut().enumerate() {
            for (t, r) in stack.ranges().iter().enumerate() {
                if k > t {
                    for i in 0..z.rows() {
                        for v in &mut z.row_mut(i)[r.clone()] {
                            *v = 1e6 * rng.standard_normal();
                        }
                    }
                }
            }
        }
        let perturbed = ScoreStack::new(scores, stack.ranges().to_vec()).unwrap();
        let (s, p) = aee_predict(&perturbed).unwrap();
        assert_eq!(s, base);
        assert_eq!(p, preds);
    }

    #[test]
    fn single_task_strategies_agree() {
        let mut rng = RngStream::new(3, "t1");
        let stack = random_stack(25, &[6], 1, &mut rng);
        let aee = aee_predict(&stack).unwrap().1;
        assert_eq!(aee, simple_ensemble_predict(&stack).unwrap());
        assert_eq!(aee, no_ensemble_predict(&stack).unwrap());
    }

    #[test]
    fn simple_ensemble_can_be_misled_by_non_experts() {
        // True class 0 of task 0. Subspace 1 never saw task 0 and pushes class 1.
        let z0 = m(&[vec![0.6, 0.3, 0.05, 0.05]]);
        let z1 = m(&[vec![0.0, 0.9, 0.05, 0.05]]);
        let stack = ScoreStack::new(vec![z0, z1], vec![0..2, 2..4]).unwrap();
        assert_eq!(aee_predict(&stack).unwrap().1, vec![0]);
        assert_eq!(simple_ensemble_predict(&stack).unwrap(), vec![1]);
    }

    #[test]
    fn uniform_scores_stay_uniform() {
        let z = DenseMatrix::from_fn(3, 4, |_, _| 0.25);
        let stack = ScoreStack::new(vec![z.clone(), z.clone()], vec![0..2, 2..4]).unwrap();
        assert_eq!(stack.fused(FusionRule::All).unwrap(), z);
        assert_eq!(simple_ensemble_predict(&stack).unwrap(), vec![0; 3]);
    }

    #[test]
    fn first_subspace_only_ignores_the_rest() {
        let mut rng = RngStream::new(4, "noe");
        let stack = random_stack(20, &[2, 2], 2, &mut rng);
        let base = no_ensemble_predict(&stack).unwrap();
        let mut scores = stack.scores().to_vec();
        scores[1] = scores[1].map(|v| -v * 100.0);
        let mutated = ScoreStack::new(scores, stack.ranges().to_vec()).unwrap();
        assert_eq!(no_ensemble_predict(&mutated).unwrap(), base);
    }

    #[test]
    fn positive_scaling_keeps_predictions() {
        let mut rng = RngStream::new(5, "scale");
        let stack = random_stack(40, &[3, 3, 3], 3, &mut rng);
        let scaled = ScoreStack::new(stack.scores().iter().map(|z| z.map(|v| 7.5 * v)).collect(), stack.ranges().to_vec())
            .unwrap();
        assert_eq!(aee_predict(&stack).unwrap().1, aee_predict(&scaled).unwrap().1);
        assert_eq!(simple_ensemble_predict(&stack).unwrap(), simple_ensemble_predict(&scaled).unwrap());
    }

    #[test]
    fn within_block_permutation_permutes_predictions() {
        let mut rng = RngStream::new(6, "perm");
        let stack = random_stack(40, &[3, 3], 2, &mut rng);
        let perm = [2, 0, 1, 4, 5, 3];
        let permuted: Vec<DenseMatrix> = stack
            .scores()
            .iter()
            .map(|z| DenseMatrix::from_fn(z.rows(), 6, |i, j| z.get(i, perm[j])))
            .collect();
        let p_stack = ScoreStack::new(permuted, stack.ranges().to_vec()).unwrap();
        let base = aee_predict(&stack).unwrap().1;
        let moved = aee_predict(&p_stack).unwrap().1;
        for (b, q) in base.iter().zip(&moved) {
            assert_eq!(perm[*q], *b);
        }
    }

    #[test]
    fn limit_one_is_first_subspace_and_full_limit_is_aee() {
        let mut rng = RngStream::new(8, "lim");
        let stack = random_stack(30, &[2, 3, 2], 3, &mut rng);
        assert_eq!(aee_predict_limited(&stack, 1).unwrap(), no_ensemble_predict(&stack).unwrap());
        assert_eq!(aee_predict_limited(&stack, 3).unwrap(), aee_predict(&stack).unwrap().1);
        assert!(matches!(aee_predict_limited(&stack, 0), Err(EnsembleError::ZeroLimit)));
    }

    #[test]
    fn incomplete_stack_rejected() {
        let mut rng = RngStream::new(9, "inc");
        let stack = random_stack(4, &[2, 2, 2], 2, &mut rng);
        assert!(matches!(aee_predict(&stack), Err(EnsembleError::Incomplete { .. })));
        assert!(matches!(simple_ensemble_predict(&stack), Err(EnsembleError::Incomplete { .. })));
        assert!(no_ensemble_predict(&stack).is_ok());
    }

    #[test]
    fn bad_shapes_and_ranges_rejected() {
        let a = DenseMatrix::zeros(2, 4);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(ScoreStack::new(vec![a.clone(), b], vec![0..4]), Err(EnsembleError::Shape { .. })));
        assert!(matches!(ScoreStack::new(vec![a.clone()], vec![0..2, 3..4]), Err(EnsembleError::Ranges { .. })));
        assert!(matches!(ScoreStack::new(vec![a], vec![0..3]), Err(EnsembleError::Ranges { .. })));
        assert!(matches!(ScoreStack::new(vec![], vec![]), Err(EnsembleError::Empty)));
    }
}
