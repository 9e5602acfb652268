use std::ops::Range;
use std::sync::Mutex;

use super::{DataError, LabeledDataset};
use crate::numeric::RngStream;

/// One step of the stream. `classes` is the task's block of global labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub classes: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Train,
    Test,
    /// Whole-stream read by an offline diagnostic.
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRecord {
    pub kind: AccessKind,
    pub task: Option<usize>,
    /// Task being learned when the read happened.
    pub learning: Option<usize>,
}

#[derive(Debug, Default)]
struct Guard {
    learning: Option<usize>,
    log: Vec<AccessRecord>,
}

/// Ordered class-disjoint tasks plus an optional pre-training split.
///
/// Task data is only reachable through [`TaskStream::train`] and
/// [`TaskStream::test`], which refuse tasks beyond the one opened with
/// [`TaskStream::begin_task`] and log every read.
#[derive(Debug)]
pub struct TaskStream {
    tasks: Vec<Task>,
    class_task: Vec<usize>,
    catalogue: Vec<usize>,
    pretrain: Option<LabeledDataset>,
    guard: Mutex<Guard>,
}

impl Clone for TaskStream {
    fn clone(&self) -> Self {
        Self {
            tasks: self.tasks.clone(),
            class_task: self.class_task.clone(),
            catalogue: self.catalogue.clone(),
            pretrain: self.pretrain.clone(),
            guard: Mutex::default(),
        }
    }
}

impl TaskStream {
    pub(crate) fn from_parts(
        tasks: Vec<Task>,
        catalogue: Vec<usize>,
        pretrain: Option<LabeledDataset>,
    ) -> Result<Self, DataError> {
        if tasks.is_empty() {
            return Err(DataError::Layout("stream has no tasks".into()));
        }
        let mut class_task = Vec::new();
        for (t, task) in tasks.iter().enumerate() {
            if task.classes.start != class_task.len() || task.classes.is_empty() {
                return Err(DataError::Layout(format!(
                    "task {t} classes {:?} are not the next contiguous block",
                    task.classes
                )));
            }
            for ds in [&task.train, &task.test] {
                if ds.labels().iter().any(|l| !task.classes.contains(l)) {
                    return Err(DataError::Layout(format!("task {t} holds foreign labels")));
                }
            }
            class_task.extend(task.classes.clone().map(|_| t));
        }
        if catalogue.len() != class_task.len() {
            return Err(DataError::Layout("catalogue does not cover every class".into()));
        }
        Ok(Self {
            tasks,
            class_task,
            catalogue,
            pretrain,
            guard: Mutex::default(),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_task.len()
    }

    /// Task index owning global class `class`.
    pub fn class_task(&self, class: usize) -> Option<usize> {
        self.class_task.get(class).copied()
    }

    pub fn task_classes(&self, task: usize) -> Option<Range<usize>> {
        self.tasks.get(task).map(|t| t.classes.clone())
    }

    pub fn task_ranges(&self) -> Vec<Range<usize>> {
        self.tasks.iter().map(|t| t.classes.clone()).collect()
    }

    /// Source-dataset class id of each global label.
    pub fn catalogue(&self) -> &[usize] {
        &self.catalogue
    }

    pub fn pretrain(&self) -> Option<&LabeledDataset> {
        self.pretrain.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].train.input_dim()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.tasks[0].train.image_shape()
    }

    /// Marks `task` as the one being learned. Tasks must be opened in order.
    pub fn begin_task(&self, task: usize) -> Result<(), DataError> {
        if task >= self.tasks.len() {
            return Err(DataError::NoSuchTask(task));
        }
        let mut guard = self.guard.lock().expect("stream guard poisoned");
        if guard.learning.is_some_and(|cur| task < cur) {
            return Err(DataError::Layout(format!(
                "tasks must be opened in order (task {task} after {:?})",
                guard.learning
            )));
        }
        guard.learning = Some(task);
        Ok(())
    }

    pub fn train(&self, task: usize) -> Result<&LabeledDataset, DataError> {
        self.checked(task, AccessKind::Train).map(|t| &t.train)
    }

    pub fn test(&self, task: usize) -> Result<&LabeledDataset, DataError> {
        self.checked(task, AccessKind::Test).map(|t| &t.test)
    }

    /// Every task at once, for offline diagnostics that are not part of the
    /// continual-learning protocol. The read is logged as such.
    pub fn offline_tasks(&self) -> &[Task] {
        let mut guard = self.guard.lock().expect("stream guard poisoned");
        let learning = guard.learning;
        guard.log.push(AccessRecord {
            kind: AccessKind::Offline,
            task: None,
            learning,
        });
        &self.tasks
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.guard.lock().expect("stream guard poisoned").log.clone()
    }

    fn checked(&self, task: usize, kind: AccessKind) -> Result<&Task, DataError> {
        let data = self.tasks.get(task).ok_or(DataError::NoSuchTask(task))?;
        let mut guard = self.guard.lock().expect("stream guard poisoned");
        let learning = guard.learning;
        guard.log.push(AccessRecord {
            kind,
            task: Some(task),
            learning,
        });
        match learning {
            Some(cur) if task <= cur => Ok(data),
            _ => Err(DataError::FutureTaskAccess {
                requested: task,
                current: learning,
            }),
        }
    }
}

/// How classes are carved into tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamLayout {
    pub tasks: usize,
    /// Size of an uneven first task; the rest is split evenly.
    pub first_task: Option<usize>,
    /// Classes (taken first from the shuffled order) held out as the
    /// pre-training split.
    pub pretrain_classes: usize,
}

impl StreamLayout {
    pub fn even(tasks: usize) -> Self {
        Self {
            tasks,
            first_task: None,
            pretrain_classes: 0,
        }
    }

    pub fn task_sizes(&self, classes: usize) -> Result<Vec<usize>, DataError> {
        let t = self.tasks;
        if t == 0 || classes < t {
            return Err(DataError::Layout(format!(
                "too few classes ({classes}) for {t} tasks"
            )));
        }
        match self.first_task {
            None => {
                if classes % t != 0 {
                    return Err(DataError::Layout(format!(
                        "{classes} classes do not split evenly into {t} tasks"
                    )));
                }
                Ok(vec![classes / t; t])
            }
            Some(first) if t == 1 => {
                if first != classes {
                    return Err(DataError::Layout(format!(
                        "single task must hold all {classes} classes, not {first}"
                    )));
                }
                Ok(vec![first])
            }
            Some(first) => {
                let rest = classes.checked_sub(first).filter(|r| *r >= t - 1);
                match rest {
                    Some(rest) if first > 0 && rest % (t - 1) == 0 => {
                        let mut sizes = vec![first];
                        sizes.extend(std::iter::repeat_n(rest / (t - 1), t - 1));
                        Ok(sizes)
                    }
                    _ => Err(DataError::Layout(format!(
                        "{classes} classes cannot form a first task of {first} plus {} even tasks",
                        t - 1
                    ))),
                }
            }
        }
    }
}

/// Shuffles the class order with `seed`, holds out the pre-training classes,
/// and partitions the rest contiguously into tasks. Train and test rows come
/// from the matching source split.
pub fn build_task_stream(
    train: &LabeledDataset,
    test: &LabeledDataset,
    layout: StreamLayout,
    seed: u64,
) -> Result<TaskStream, DataError> {
    if train.input_dim() != test.input_dim() || train.image_shape() != test.image_shape() {
        return Err(DataError::Invalid("train and test inputs differ in shape".into()));
    }
    let total = train.num_classes().max(test.num_classes());
    let mut order = RngStream::new(seed, "class-order").permutation(total);
    if layout.pretrain_classes >= total {
        return Err(DataError::Layout(format!(
            "{} pre-training classes leave nothing of {total}",
            layout.pretrain_classes
        )));
    }
    let stream_classes = order.split_off(layout.pretrain_classes);
    let pretrain_classes = order;
    let sizes = layout.task_sizes(stream_classes.len())?;

    // source class id -> global stream label
    let mut global = vec![None; total];
    for (g, &c) in stream_classes.iter().enumerate() {
        global[c] = Some(g);
    }

    let mut tasks = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (t, size) in sizes.into_iter().enumerate() {
        let classes = start..start + size;
        let pick = |l: usize| global[l].filter(|g| classes.contains(g));
        let task_train = train
            .filter_relabel(pick, stream_classes.len())
            .ok_or_else(|| DataError::Layout(format!("task {t} has no training rows")))?;
        let task_test = test
            .filter_relabel(pick, stream_classes.len())
            .ok_or_else(|| DataError::Layout(format!("task {t} has no test rows")))?;
        tasks.push(Task {
            train: task_train,
            test: task_test,
            classes: classes.clone(),
        });
        start = classes.end;
    }

    let pretrain = if pretrain_classes.is_empty() {
        None
    } else {
        let mut local = vec![None; total];
        for (i, &c) in pretrain_classes.iter().enumerate() {
            local[c] = Some(i);
        }
        train.filter_relabel(|l| local[l], pretrain_classes.len())
    };
    TaskStream::from_parts(tasks, stream_classes, pretrain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::DenseMatrix;
    use std::collections::BTreeSet;

    fn toy(classes: usize, per_class: usize) -> LabeledDataset {
        let n = classes * per_class;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let inputs = DenseMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        LabeledDataset::new(inputs, None, labels, classes).unwrap()
    }

    fn class_sets(stream: &TaskStream) -> Vec<BTreeSet<usize>> {
        stream
            .offline_tasks()
            .iter()
            .map(|t| t.train.labels().iter().copied().collect())
            .collect()
    }

    #[test]
    fn ten_classes_five_tasks() {
        let ds = toy(10, 3);
        let s = build_task_stream(&ds, &ds, StreamLayout::even(5), 1993).unwrap();
        assert_eq!(s.num_tasks(), 5);
        let sets = class_sets(&s);
        for (t, set) in sets.iter().enumerate() {
            assert_eq!(set.len(), 2);
            for other in &sets[t + 1..] {
                assert!(set.is_disjoint(other));
            }
        }
        let again = build_task_stream(&ds, &ds, StreamLayout::even(5), 1993).unwrap();
        assert_eq!(s.catalogue(), again.catalogue());
        assert_eq!(s.offline_tasks(), again.offline_tasks());
    }

    #[test]
    fn single_task_keeps_every_row() {
        let ds = toy(4, 5);
        let s = build_task_stream(&ds, &ds, StreamLayout::even(1), 3).unwrap();
        let task = &s.offline_tasks()[0];
        assert_eq!(task.train.inputs(), ds.inputs());
        let back: Vec<usize> = task.train.labels().iter().map(|&g| s.catalogue()[g]).collect();
        assert_eq!(back, ds.labels());
    }

    #[test]
    fn uneven_first_task_layout() {
        let layout = StreamLayout {
            tasks: 10,
            first_task: Some(16),
            pretrain_classes: 0,
        };
        let mut expected = vec![16];
        expected.extend([20; 9]);
        assert_eq!(layout.task_sizes(196).unwrap(), expected);

        let ds = toy(196, 1);
        let s = build_task_stream(&ds, &ds, layout, 1993).unwrap();
        let sizes: Vec<usize> = s.task_ranges().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, expected);
    }

    #[test]
    fn too_few_classes() {
        let ds = toy(3, 2);
        assert!(matches!(
            build_task_stream(&ds, &ds, StreamLayout::even(5), 0),
            Err(DataError::Layout(_))
        ));
    }

    #[test]
    fn pretrain_classes_are_held_out() {
        let ds = toy(12, 2);
        let layout = StreamLayout {
            tasks: 4,
            first_task: None,
            pretrain_classes: 4,
        };
        let s = build_task_stream(&ds, &ds, layout, 9).unwrap();
        assert_eq!(s.num_classes(), 8);
        let pre = s.pretrain().unwrap();
        assert_eq!(pre.num_classes(), 4);
        assert_eq!(pre.len(), 8);
    }

    #[test]
    fn guard_refuses_future_tasks() {
        let ds = toy(6, 2);
        let s = build_task_stream(&ds, &ds, StreamLayout::even(3), 0).unwrap();
        assert!(s.train(0).is_err());
        s.begin_task(0).unwrap();
        assert!(s.train(0).is_ok());
        assert!(matches!(
            s.test(1),
            Err(DataError::FutureTaskAccess { requested: 1, current: Some(0) })
        ));
        s.begin_task(1).unwrap();
        assert!(s.test(1).is_ok());
        assert!(s.begin_task(0).is_err());
        assert_eq!(s.access_log().len(), 4);
    }
}
