//! Aligned per-subspace classifiers and the frozen per-task heads of the
//! misaligned baseline.
//!
//! A [`SubspaceClassifier`] covers every class seen so far, in task order, and
//! grows one block of output rows per task. Each fine-tuning round mixes the
//! current task's real features with features drawn from the store for every
//! older class.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss_store::{GaussError, GaussStore};
use crate::numeric::{
    argmax, softmax_cross_entropy, softmax_rows, DenseMatrix, Linear, NumericError, OptimState, RngStream,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("a head cannot grow by zero classes")]
    EmptyExpansion,
    #[error("feature dim {found} does not match head input {expected}")]
    Dim { expected: usize, found: usize },
    #[error("label {label} outside the head's {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("store has no statistics for old class {class}")]
    MissingOldClass {
        class: usize,
        #[source]
        source: GaussError,
    },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_lr() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    64
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            batch: default_batch(),
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch == 0 {
            return Err(ClassifierError::InvalidConfig(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How many synthetic features each old class contributes per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    /// Fraction of the real current-task rows used each epoch.
    pub real_fraction: f64,
    pub synthetic_per_class: usize,
}

impl ReplayPlan {
    /// Old classes get as many draws as an average current class has rows:
    /// `ceil(real_rows / current_classes)`.
    pub fn balanced(real_rows: usize, current_classes: usize) -> Self {
        Self {
            real_fraction: 1.0,
            synthetic_per_class: real_rows.div_ceil(current_classes.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceClassifier {
    subspace: usize,
    head: Linear,
    task_ranges: Vec<Range<usize>>,
}

impl SubspaceClassifier {
    /// An empty head over `dim`-dimensional features of subspace `subspace`.
    pub fn new(subspace: usize, dim: usize) -> Self {
        Self {
            subspace,
            head: Linear::zeros(dim, 0),
            task_ranges: Vec::new(),
        }
    }

    pub fn subspace(&self) -> usize {
        self.subspace
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn dim(&self) -> usize {
        self.head.inputs()
    }

    pub fn task_ranges(&self) -> &[Range<usize>] {
        &self.task_ranges
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Appends `new_classes` zero rows as the next task's block.
    pub fn expand_head(&mut self, new_classes: usize) -> Result<Range<usize>, ClassifierError> {
        if new_classes == 0 {
            return Err(ClassifierError::EmptyExpansion);
        }
        let (old, dim) = (self.num_classes(), self.dim());
        let mut weight = self.head.weight.as_slice().to_vec();
        weight.resize((old + new_classes) * dim, 0.0);
        let mut bias = self.head.bias.as_slice().to_vec();
        bias.resize(old + new_classes, 0.0);
        self.head = Linear {
            weight: DenseMatrix::from_vec(old + new_classes, dim, weight)?,
            bias: DenseMatrix::from_vec(1, old + new_classes, bias)?,
        };
        let range = old..old + new_classes;
        self.task_ranges.push(range.clone());
        Ok(range)
    }

    pub fn logits(&self, features: &DenseMatrix) -> Result<DenseMatrix, ClassifierError> {
        if features.cols() != self.dim() {
            return Err(ClassifierError::Dim {
                expected: self.dim(),
                found: features.cols(),
            });
        }
        Ok(self.head.forward(features)?)
    }

    /// Softmax probabilities over every class the head covers.
    pub fn score(&self, features: &DenseMatrix) -> Result<DenseMatrix, ClassifierError> {
        Ok(softmax_rows(&self.logits(features)?))
    }

    pub fn predict(&self, features: &DenseMatrix) -> Result<Vec<usize>, ClassifierError> {
        Ok(self.logits(features)?.iter_rows().map(argmax).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneStats {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub synthetic_per_class: usize,
}

/// SGD on cross-entropy over the real rows plus, each epoch, fresh draws from
/// `store.effective_gaussian(subspace, c)` for every `c` in `old_classes`.
/// Starts from the head's current weights.
#[allow(clippy::too_many_arguments)]
pub fn finetune_classifier(
    classifier: &mut SubspaceClassifier,
    real_features: &DenseMatrix,
    real_labels: &[usize],
    store: &GaussStore,
    old_classes: Range<usize>,
    plan: &ReplayPlan,
    config: &ClassifierTrainConfig,
    rng: &RngStream,
) -> Result<FinetuneStats, ClassifierError> {
    config.validate()?;
    let classes = classifier.num_classes();
    if real_features.cols() != classifier.dim() {
        return Err(ClassifierError::Dim {
            expected: classifier.dim(),
            found: real_features.cols(),
        });
    }
    if real_labels.len() != real_features.rows() {
        return Err(ClassifierError::InvalidConfig(format!(
            "{} labels for {} feature rows",
            real_labels.len(),
            real_features.rows()
        )));
    }
    let top = real_labels.iter().copied().chain(old_classes.clone().last()).max();
    if let Some(label) = top.filter(|&l| l >= classes) {
        return Err(ClassifierError::LabelOutOfRange { label, classes });
    }
    for class in old_classes.clone() {
        store
            .effective_gaussian(classifier.subspace, class)
            .map_err(|source| ClassifierError::MissingOldClass { class, source })?;
    }

    let mut replay_rng = rng.derive("replay");
    let mut order_rng = rng.derive("order");
    let mut opt = OptimState::sgd(config.lr)?;
    let real_count = ((real_features.rows() as f64) * plan.real_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut parts = Vec::with_capacity(old_classes.len() + 1);
        let mut labels = Vec::new();
        let real_rows: Vec<usize> = if real_count == real_features.rows() {
            (0..real_count).collect()
        } else {
            let mut perm = order_rng.permutation(real_features.rows());
            perm.truncate(real_count);
            perm
        };
        parts.push(real_features.select_rows(&real_rows));
        labels.extend(real_rows.iter().map(|&i| real_labels[i]));
        for class in old_classes.clone() {
            let (x, y) = store
                .sample_class_features(classifier.subspace, class, plan.synthetic_per_class, &mut replay_rng)
                .map_err(|source| ClassifierError::MissingOldClass { class, source })?;
            parts.push(x);
            labels.extend(y);
        }
        let data = DenseMatrix::vstack(&parts.iter().collect::<Vec<_>>())?;
        if data.rows() == 0 {
            epoch_losses.push(0.0);
            continue;
        }

        let perm = order_rng.permutation(data.rows());
        let mut total = 0.0;
        for idx in perm.chunks(config.batch) {
            let x = data.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, d_logits) = softmax_cross_entropy(&classifier.head.forward(&x)?, &y)?;
            let g = classifier.head.backward(&x, &d_logits)?;
            total += loss * idx.len() as f64;
            let head = &mut classifier.head;
            opt.step(&mut [&mut head.weight, &mut head.bias], &[&g.weight, &g.bias])?;
        }
        epoch_losses.push(total / data.rows() as f64);
    }
    Ok(FinetuneStats {
        epoch_losses,
        synthetic_per_class: plan.synthetic_per_class,
    })
}

/// A head over one task's classes only, trained in that task's subspace and
/// frozen afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub task: usize,
    pub classes: Range<usize>,
    head: SubspaceClassifier,
}

impl TaskHead {
    /// Plain cross-entropy training on the task's own features. Labels are
    /// global and must lie in `classes`.
    pub fn train(
        task: usize,
        classes: Range<usize>,
        features: &DenseMatrix,
        labels: &[usize],
        config: &ClassifierTrainConfig,
        rng: &RngStream,
    ) -> Result<Self, ClassifierError> {
        let mut head = SubspaceClassifier::new(task, features.cols());
        head.expand_head(classes.len())?;
        let local = labels
            .iter()
            .map(|&l| {
                if classes.contains(&l) {
                    Ok(l - classes.start)
                } else {
                    Err(ClassifierError::LabelOutOfRange {
                        label: l,
                        classes: classes.end,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let plan = ReplayPlan {
            real_fraction: 1.0,
            synthetic_per_class: 0,
        };
        finetune_classifier(&mut head, features, &local, &GaussStore::new(), 0..0, &plan, config, rng)?;
        Ok(Self { task, classes, head })
    }

    /// Raw logits over the task's own classes.
    pub fn logits(&self, features: &DenseMatrix) -> Result<DenseMatrix, ClassifierError> {
        self.head.logits(features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_stream, SyntheticSpec};

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.normal(0.0, 1.0))
    }

    #[test]
    fn expansion_preserves_old_logits() {
        let mut rng = RngStream::new(1, "clf");
        let mut clf = SubspaceClassifier::new(0, 5);
        clf.expand_head(3).unwrap();
        clf.head.weight = random(3, 5, &mut rng);
        clf.head.bias = random(1, 3, &mut rng);
        let x = random(4, 5, &mut rng);
        let before = clf.logits(&x).unwrap();
        assert_eq!(clf.expand_head(2).unwrap(), 3..5);
        let after = clf.logits(&x).unwrap();
        assert_eq!(after.column_block(0, 3), before);
        assert!(after.column_block(3, 5).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ranges_partition_outputs() {
        let mut clf = SubspaceClassifier::new(0, 2);
        clf.expand_head(10).unwrap();
        clf.expand_head(10).unwrap();
        assert_eq!(clf.num_classes(), 20);
        assert_eq!(clf.task_ranges(), &[0..10, 10..20]);
        assert!(matches!(clf.expand_head(0), Err(ClassifierError::EmptyExpansion)));
    }

    #[test]
    fn zero_head_scores_uniformly() {
        let mut clf = SubspaceClassifier::new(0, 3);
        clf.expand_head(4).unwrap();
        let s = clf.score(&random(2, 3, &mut RngStream::new(0, "x"))).unwrap();
        assert!(s.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn score_rows_normalised_and_argmax_consistent() {
        let mut rng = RngStream::new(2, "score");
        let mut clf = SubspaceClassifier::new(0, 6);
        clf.expand_head(9).unwrap();
        clf.head.weight = random(9, 6, &mut rng);
        let x = random(20, 6, &mut rng);
        let s = clf.score(&x).unwrap();
        let z = clf.logits(&x).unwrap();
        for (ps, zs) in s.iter_rows().zip(z.iter_rows()) {
            assert!((ps.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(argmax(ps), argmax(zs));
        }
    }

    fn separable(noise: f64) -> (DenseMatrix, Vec<usize>) {
        let spec = SyntheticSpec {
            tasks: 1,
            classes_per_task: 4,
            input_dim: 2,
            block_dims: 2,
            noise,
            per_class: 25,
            pretrain_classes: 0,
        };
        let stream = gen_synthetic_stream(&spec, &RngStream::new(1993, "s")).unwrap();
        let t = &stream.offline_tasks()[0];
        (t.train.inputs().clone(), t.train.labels().to_vec())
    }

    fn accuracy(clf: &SubspaceClassifier, x: &DenseMatrix, y: &[usize]) -> f64 {
        let p = clf.predict(x).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn first_task_is_plain_training() {
        let (x, y) = separable(0.0);
        let mut clf = SubspaceClassifier::new(0, 2);
        clf.expand_head(4).unwrap();
        let plan = ReplayPlan::balanced(x.rows(), 4);
        finetune_classifier(&mut clf, &x, &y, &GaussStore::new(), 0..0, &plan, &Default::default(), &RngStream::new(0, "ft"))
            .unwrap();
        assert!(accuracy(&clf, &x, &y) >= 0.99);
    }

    #[test]
    fn smoothed_loss_decreases_on_convex_probe() {
        let (x, y) = separable(0.5);
        let mut clf = SubspaceClassifier::new(0, 2);
        clf.expand_head(4).unwrap();
        let config = ClassifierTrainConfig {
            lr: 0.05,
            epochs: 30,
            batch: 16,
        };
        let stats = finetune_classifier(
            &mut clf,
            &x,
            &y,
            &GaussStore::new(),
            0..0,
            &ReplayPlan::balanced(x.rows(), 4),
            &config,
            &RngStream::new(0, "probe"),
        )
        .unwrap();
        let smoothed: Vec<f64> = stats.epoch_losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for pair in smoothed.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-3, "{smoothed:?}");
        }
    }

    #[test]
    fn point_mass_replay_keeps_old_classes() {
        // Old classes at well-separated points with floor variance.
        let mut store = GaussStore::new();
        let old = DenseMatrix::from_rows(&[vec![4.0, 0.0], vec![-4.0, 0.0]]).unwrap();
        store.record_task_gaussians(0, 0..2, &[&old], &[0, 1]).unwrap();
        let real = DenseMatrix::from_rows(&[vec![0.0, 4.0], vec![0.0, -4.0]]).unwrap();
        let mut clf = SubspaceClassifier::new(0, 2);
        clf.expand_head(2).unwrap();
        clf.expand_head(2).unwrap();
        let plan = ReplayPlan::balanced(2, 2);
        finetune_classifier(&mut clf, &real, &[2, 3], &store, 0..2, &plan, &Default::default(), &RngStream::new(1, "r"))
            .unwrap();
        let (samples, labels) = {
            let (a, la) = store.sample_class_features(0, 0, 50, &mut RngStream::new(9, "eval")).unwrap();
            let (b, lb) = store.sample_class_features(0, 1, 50, &mut RngStream::new(9, "eval2")).unwrap();
            (DenseMatrix::vstack(&[&a, &b]).unwrap(), [la, lb].concat())
        };
        assert!(accuracy(&clf, &samples, &labels) >= 0.99);
        assert!(accuracy(&clf, &real, &[2, 3]) >= 0.99);
    }

    #[test]
    fn missing_old_class_is_an_error() {
        let mut clf = SubspaceClassifier::new(0, 2);
        clf.expand_head(4).unwrap();
        let real = DenseMatrix::zeros(1, 2);
        let err = finetune_classifier(
            &mut clf,
            &real,
            &[3],
            &GaussStore::new(),
            0..2,
            &ReplayPlan::balanced(1, 2),
            &Default::default(),
            &RngStream::new(0, "x"),
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::MissingOldClass { class: 0, .. }));
    }

    #[test]
    fn replay_count_rounds_up() {
        assert_eq!(ReplayPlan::balanced(401, 10).synthetic_per_class, 41);
        assert_eq!(ReplayPlan::balanced(400, 10).synthetic_per_class, 40);
    }

    #[test]
    fn task_head_sees_only_its_classes() {
        let (x, y) = separable(0.0);
        let shifted: Vec<usize> = y.iter().map(|l| l + 8).collect();
        let head = TaskHead::train(2, 8..12, &x, &shifted, &Default::default(), &RngStream::new(0, "h")).unwrap();
        assert_eq!(head.logits(&x).unwrap().cols(), 4);
        assert!(TaskHead::train(2, 8..12, &x, &y, &Default::default(), &RngStream::new(0, "h")).is_err());
    }
}
