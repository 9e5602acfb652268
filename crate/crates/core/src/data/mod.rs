//! Labeled datasets, task streams and their ingestion.
//!
//! A [`TaskStream`] relabels classes so that task `t` owns a contiguous block of
//! global labels, in task order. Every classifier head in the crate therefore
//! indexes its outputs by global label directly.

mod glyphs;
mod idx;
mod rotate;
mod stream;
mod synthetic;

pub use glyphs::{gen_glyph_dataset, GlyphSpec};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, write_idx,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use rotate::{rotate90, rotate_inputs};
pub use stream::{build_task_stream, AccessKind, AccessRecord, StreamLayout, Task, TaskStream};
pub use synthetic::{gen_synthetic_stream, SyntheticSpec};

use std::path::PathBuf;

use thiserror::Error;

use crate::numeric::{DenseMatrix, NumericError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("stream layout: {0}")]
    Layout(String),
    #[error("rotation requires square images, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("dataset holds feature vectors, not images")]
    NotImages,
    #[error("task {requested} accessed while learning task {current:?}")]
    FutureTaskAccess {
        requested: usize,
        current: Option<usize>,
    },
    #[error("no task {0} in stream")]
    NoSuchTask(usize),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Inputs (one row per example) with integer labels.
///
/// Image datasets keep their pixels flattened row-major in each input row and
/// record the `(rows, cols)` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: DenseMatrix,
    image_shape: Option<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: DenseMatrix,
        image_shape: Option<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if inputs.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(DataError::Invalid("dataset is empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside catalogue of {num_classes} classes"
            )));
        }
        if let Some((r, c)) = image_shape {
            if r * c != inputs.cols() {
                return Err(DataError::Invalid(format!(
                    "image shape {r}x{c} does not match input width {}",
                    inputs.cols()
                )));
            }
        }
        Ok(Self {
            inputs,
            image_shape,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    /// Rows whose label is in `keep`, relabelled through `relabel`.
    pub(crate) fn filter_relabel(
        &self,
        keep: impl Fn(usize) -> Option<usize>,
        num_classes: usize,
    ) -> Option<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(new) = keep(l) {
                rows.push(i);
                labels.push(new);
            }
        }
        if rows.is_empty() {
            return None;
        }
        Some(Self {
            inputs: self.inputs.select_rows(&rows),
            image_shape: self.image_shape,
            labels,
            num_classes,
        })
    }

    /// Rows labelled `class`.
    pub fn class_rows(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}
