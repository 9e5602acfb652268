//! Per-(subspace, class) diagonal Gaussians of feature vectors.
//!
//! When task `t` finishes, the features of its classes are summarised in every
//! subspace that exists at that point (`0..=t`). Class `c` of task `T_c`
//! therefore has a real entry in subspace `k` exactly when `k <= T_c`. Later
//! subspaces fall back to the class's own-task statistics, flagged as an
//! approximation.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{sample_diag_gaussian, DenseMatrix, NumericError, RngStream};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("cannot fit a Gaussian to an empty feature set")]
    Empty,
    #[error("class {0} has no recorded statistics")]
    UnknownClass(usize),
    #[error("entry (subspace {subspace}, class {class}) already recorded")]
    Duplicate { subspace: usize, class: usize },
    #[error("task {task} supplied features for {supplied} subspaces; at most {} exist", task + 1)]
    FutureSubspace { task: usize, supplied: usize },
    #[error("feature dim {found} does not match store dim {expected}")]
    Dim { expected: usize, found: usize },
    #[error("class {class} has no rows in the supplied features")]
    MissingClassRows { class: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaussianOrigin {
    Real,
    Approximated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub class: usize,
    /// Subspace the statistics were computed in.
    pub subspace: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
    pub origin: GaussianOrigin,
}

/// Per-dimension mean and Bessel-corrected variance (floored at
/// [`VARIANCE_FLOOR`]; a single row gets the floor everywhere).
pub fn fit_class_gaussian(features: &DenseMatrix, class: usize, subspace: usize) -> Result<ClassGaussian, GaussError> {
    let n = features.rows();
    if n == 0 {
        return Err(GaussError::Empty);
    }
    let d = features.cols();
    let mut mean = vec![0.0; d];
    for row in features.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    if n >= 2 {
        for row in features.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut var {
            *s /= (n - 1) as f64;
        }
    }
    for s in &mut var {
        *s = s.max(VARIANCE_FLOOR);
    }
    Ok(ClassGaussian {
        class,
        subspace,
        mean,
        var,
        count: n,
        origin: GaussianOrigin::Real,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoreRepr", into = "StoreRepr")]
pub struct GaussStore {
    /// Keyed by `(subspace, class)`; only real entries are stored.
    entries: BTreeMap<(usize, usize), ClassGaussian>,
    class_task: BTreeMap<usize, usize>,
}

/// Serialized form: entries as a flat list, since JSON keys must be strings.
#[derive(Serialize, Deserialize)]
struct StoreRepr {
    entries: Vec<ClassGaussian>,
    class_task: BTreeMap<usize, usize>,
}

impl From<StoreRepr> for GaussStore {
    fn from(repr: StoreRepr) -> Self {
        Self {
            entries: repr.entries.into_iter().map(|g| ((g.subspace, g.class), g)).collect(),
            class_task: repr.class_task,
        }
    }
}

impl From<GaussStore> for StoreRepr {
    fn from(store: GaussStore) -> Self {
        Self {
            entries: store.entries.into_values().collect(),
            class_task: store.class_task,
        }
    }
}

impl GaussStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(subspace, class)` keys of every real entry, in key order.
    pub fn real_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, subspace: usize, class: usize) -> Option<&ClassGaussian> {
        self.entries.get(&(subspace, class))
    }

    pub fn class_task(&self, class: usize) -> Option<usize> {
        self.class_task.get(&class).copied()
    }

    /// Records the classes `classes` of task `task`. `features_by_subspace[k]`
    /// holds the task's training features in subspace `k` (rows aligned with
    /// `labels`); at most `task + 1` subspaces may be supplied.
    pub fn record_task_gaussians(
        &mut self,
        task: usize,
        classes: Range<usize>,
        features_by_subspace: &[&DenseMatrix],
        labels: &[usize],
    ) -> Result<(), GaussError> {
        if features_by_subspace.len() > task + 1 {
            return Err(GaussError::FutureSubspace {
                task,
                supplied: features_by_subspace.len(),
            });
        }
        for k in 0..features_by_subspace.len() {
            for class in classes.clone() {
                if self.entries.contains_key(&(k, class)) {
                    return Err(GaussError::Duplicate { subspace: k, class });
                }
            }
        }
        let dim = self.entries.values().next().map(|g| g.mean.len());
        let mut fitted = Vec::new();
        for (k, features) in features_by_subspace.iter().enumerate() {
            if let Some(expected) = dim.filter(|&d| d != features.cols()) {
                return Err(GaussError::Dim {
                    expected,
                    found: features.cols(),
                });
            }
            for class in classes.clone() {
                let rows: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == class)
                    .map(|(i, _)| i)
                    .collect();
                if rows.is_empty() {
                    return Err(GaussError::MissingClassRows { class });
                }
                fitted.push(fit_class_gaussian(&features.select_rows(&rows), class, k)?);
            }
        }
        for g in fitted {
            self.entries.insert((g.subspace, g.class), g);
        }
        for class in classes {
            self.class_task.insert(class, task);
        }
        Ok(())
    }

    /// The Gaussian used for class `class` in subspace `subspace`: the real
    /// entry when `subspace <= T_c`, otherwise the class's own-task entry
    /// `(T_c, class)` marked [`GaussianOrigin::Approximated`].
    pub fn effective_gaussian(&self, subspace: usize, class: usize) -> Result<ClassGaussian, GaussError> {
        let home = self.class_task(class).ok_or(GaussError::UnknownClass(class))?;
        if subspace <= home {
            self.entries
                .get(&(subspace, class))
                .cloned()
                .ok_or(GaussError::UnknownClass(class))
        } else {
            let mut g = self
                .entries
                .get(&(home, class))
                .cloned()
                .ok_or(GaussError::UnknownClass(class))?;
            g.origin = GaussianOrigin::Approximated;
            Ok(g)
        }
    }

    /// `n` draws from the effective Gaussian, all labelled `class`.
    pub fn sample_class_features(
        &self,
        subspace: usize,
        class: usize,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<(DenseMatrix, Vec<usize>), GaussError> {
        let g = self.effective_gaussian(subspace, class)?;
        let x = sample_diag_gaussian(&g.mean, &g.var, n, rng)?;
        Ok((x, vec![class; n]))
    }
}
