//! Block-structured Gaussian task streams.
//!
//! Task `t` owns input coordinates `t*b .. (t+1)*b`. Class `j` of that task is
//! centred on the ±1 pattern given by the low `b` bits of `j` inside the block
//! (bit set → +1) and on zero everywhere else, so its classes are separated
//! only along the task's private block. Every coordinate carries isotropic
//! noise of standard deviation `noise`.

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset, Task, TaskStream};
use crate::numeric::{DenseMatrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    /// Width `b` of each task's private block.
    pub block_dims: usize,
    pub noise: f64,
    /// Examples per class before the 80/20 train/test split.
    pub per_class: usize,
    /// Extra classes generated as the pre-training split (0 for none). Their
    /// means are random ±1 patterns over all coordinates.
    #[serde(default)]
    pub pretrain_classes: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Invalid(msg));
        if self.tasks == 0 || self.classes_per_task == 0 || self.block_dims == 0 {
            return bad("tasks, classes per task and block width must be positive".into());
        }
        if self.input_dim < self.tasks * self.block_dims {
            return bad(format!(
                "input dim {} cannot hold {} blocks of {}",
                self.input_dim, self.tasks, self.block_dims
            ));
        }
        if self.block_dims < usize::BITS as usize && (1usize << self.block_dims) < self.classes_per_task {
            return bad(format!(
                "{} sign patterns cannot encode {} classes",
                1usize << self.block_dims,
                self.classes_per_task
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if self.per_class < 2 {
            return bad("at least two examples per class are needed for a train/test split".into());
        }
        Ok(())
    }

    pub fn train_per_class(&self) -> usize {
        (self.per_class * 4 / 5).max(1)
    }

    fn class_mean(&self, task: usize, class_in_task: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.input_dim];
        let start = task * self.block_dims;
        for bit in 0..self.block_dims {
            mean[start + bit] = if (class_in_task >> bit) & 1 == 1 { 1.0 } else { -1.0 };
        }
        mean
    }
}

fn draw_class(
    mean: &[f64],
    noise: f64,
    count: usize,
    rng: &mut RngStream,
    rows: &mut Vec<f64>,
) {
    for _ in 0..count {
        for m in mean {
            rows.push(m + noise * rng.standard_normal());
        }
    }
}

pub fn gen_synthetic_stream(spec: &SyntheticSpec, rng: &RngStream) -> Result<TaskStream, DataError> {
    spec.validate()?;
    let d = spec.input_dim;
    let m = spec.classes_per_task;
    let n_train = spec.train_per_class();
    let n_test = spec.per_class - n_train;
    let total = spec.tasks * m;

    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut task_rng = rng.derive(&format!("task{t}"));
        let (mut train_x, mut test_x) = (Vec::new(), Vec::new());
        let (mut train_y, mut test_y) = (Vec::new(), Vec::new());
        for j in 0..m {
            let mean = spec.class_mean(t, j);
            let label = t * m + j;
            draw_class(&mean, spec.noise, n_train, &mut task_rng, &mut train_x);
            draw_class(&mean, spec.noise, n_test, &mut task_rng, &mut test_x);
            train_y.extend(std::iter::repeat_n(label, n_train));
            test_y.extend(std::iter::repeat_n(label, n_test));
        }
        let train = LabeledDataset::new(DenseMatrix::from_vec(m * n_train, d, train_x)?, None, train_y, total)?;
        let test = LabeledDataset::new(DenseMatrix::from_vec(m * n_test, d, test_x)?, None, test_y, total)?;
        tasks.push(Task {
            train,
            test,
            classes: t * m..(t + 1) * m,
        });
    }

    let pretrain = if spec.pretrain_classes == 0 {
        None
    } else {
        let mut pre_rng = rng.derive("pretrain");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..spec.pretrain_classes {
            let mean: Vec<f64> = (0..d)
                .map(|_| if pre_rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect();
            draw_class(&mean, spec.noise, n_train, &mut pre_rng, &mut xs);
            ys.extend(std::iter::repeat_n(c, n_train));
        }
        let n = ys.len();
        Some(LabeledDataset::new(
            DenseMatrix::from_vec(n, d, xs)?,
            None,
            ys,
            spec.pretrain_classes,
        )?)
    };

    TaskStream::from_parts(tasks, (0..total).collect(), pretrain)
}
