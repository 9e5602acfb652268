//! The frozen feature extractor underneath every subspace.
//!
//! Two constructions are available: a fixed random projection followed by
//! `tanh`, and a small `tanh` MLP trained once on a pre-training split with a
//! throwaway softmax head and then frozen. Either way the extractor is a pure
//! function of its weights, which never change after construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::numeric::{
    argmax, checksum, softmax_cross_entropy, DenseMatrix, Linear, NumericError, OptimState, RngStream,
};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("the pretrained backbone needs a pre-training split")]
    MissingPretrainData,
    #[error("input width {found} does not match backbone input {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("invalid backbone spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    RandomProjection,
    PretrainedMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Output feature dimension.
    pub dim: usize,
    /// Hidden widths of the pretrained MLP (ignored by the random projection).
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_pretrain_lr")]
    pub pretrain_lr: f64,
    #[serde(default = "default_batch")]
    pub pretrain_batch: usize,
}

fn default_pretrain_epochs() -> usize {
    30
}

fn default_pretrain_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    64
}

impl BackboneSpec {
    pub fn random_projection(dim: usize) -> Self {
        Self {
            kind: BackboneKind::RandomProjection,
            dim,
            hidden: Vec::new(),
            pretrain_epochs: default_pretrain_epochs(),
            pretrain_lr: default_pretrain_lr(),
            pretrain_batch: default_batch(),
        }
    }

    pub fn pretrained_mlp(dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            kind: BackboneKind::PretrainedMlp,
            hidden,
            ..Self::random_projection(dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    kind: BackboneKind,
    input_dim: usize,
    image_shape: Option<(usize, usize)>,
    /// `tanh` follows every layer, including the last.
    layers: Vec<Linear>,
    provenance: String,
    pretrain_accuracy: Option<f64>,
}

impl Backbone {
    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Linear::outputs)
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Training accuracy of the pretrained MLP on its pre-training split,
    /// measured just before freezing.
    pub fn pretrain_accuracy(&self) -> Option<f64> {
        self.pretrain_accuracy
    }

    pub fn checksum(&self) -> String {
        checksum(self.layers.iter().flat_map(|l| [&l.weight, &l.bias]))
    }

    pub fn extract_features(&self, inputs: &DenseMatrix) -> Result<DenseMatrix, BackboneError> {
        if inputs.cols() != self.input_dim {
            return Err(BackboneError::InputShape {
                expected: self.input_dim,
                found: inputs.cols(),
            });
        }
        let mut h = inputs.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?.map(f64::tanh);
        }
        Ok(h)
    }
}

/// Builds the frozen extractor for inputs of width `input_dim`.
pub fn build_backbone(
    spec: &BackboneSpec,
    input_dim: usize,
    image_shape: Option<(usize, usize)>,
    pretrain: Option<&LabeledDataset>,
    rng: &RngStream,
) -> Result<Backbone, BackboneError> {
    if spec.dim == 0 || input_dim == 0 {
        return Err(BackboneError::Invalid("dimensions must be positive".into()));
    }
    let mut init = rng.derive("init");
    match spec.kind {
        BackboneKind::RandomProjection => {
            // Entries N(0, 1/dim) keep E‖Wx‖² = ‖x‖².
            let layer = Linear::random(input_dim, spec.dim, (1.0 / spec.dim as f64).sqrt(), 0.1, &mut init);
            Ok(Backbone {
                kind: spec.kind,
                input_dim,
                image_shape,
                layers: vec![layer],
                provenance: format!("random_projection seed={} label={}", rng.seed(), rng.label()),
                pretrain_accuracy: None,
            })
        }
        BackboneKind::PretrainedMlp => {
            let data = pretrain.ok_or(BackboneError::MissingPretrainData)?;
            if data.input_dim() != input_dim {
                return Err(BackboneError::InputShape {
                    expected: input_dim,
                    found: data.input_dim(),
                });
            }
            let mut widths = vec![input_dim];
            widths.extend(&spec.hidden);
            widths.push(spec.dim);
            let layers = widths
                .windows(2)
                .map(|w| Linear::random(w[0], w[1], (1.0 / w[0] as f64).sqrt(), 0.0, &mut init))
                .collect();
            let mut backbone = Backbone {
                kind: spec.kind,
                input_dim,
                image_shape,
                layers,
                provenance: format!(
                    "pretrained_mlp seed={} label={} classes={} examples={} epochs={}",
                    rng.seed(),
                    rng.label(),
                    data.num_classes(),
                    data.len(),
                    spec.pretrain_epochs
                ),
                pretrain_accuracy: None,
            };
            let accuracy = pretrain_mlp(&mut backbone, spec, data, rng)?;
            backbone.pretrain_accuracy = Some(accuracy);
            Ok(backbone)
        }
    }
}

/// Trains the MLP layers plus a temporary softmax head; returns the final
/// training accuracy. The head is discarded.
fn pretrain_mlp(
    backbone: &mut Backbone,
    spec: &BackboneSpec,
    data: &LabeledDataset,
    rng: &RngStream,
) -> Result<f64, BackboneError> {
    let mut head_rng = rng.derive("pretrain-head");
    let mut head = Linear::random(spec.dim, data.num_classes(), 0.01, 0.0, &mut head_rng);
    let mut opt = OptimState::adam(spec.pretrain_lr)?;
    let mut order_rng = rng.derive("pretrain-order");
    let batch = spec.pretrain_batch.max(1);
    for _ in 0..spec.pretrain_epochs {
        let perm = order_rng.permutation(data.len());
        for idx in perm.chunks(batch) {
            let x = data.inputs().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();

            let mut acts = vec![x];
            for layer in &backbone.layers {
                let next = layer.forward(acts.last().expect("non-empty"))?.map(f64::tanh);
                acts.push(next);
            }
            let feats = acts.last().expect("non-empty");
            let (_, d_logits) = softmax_cross_entropy(&head.forward(feats)?, &y)?;
            let head_grads = head.backward(feats, &d_logits)?;

            let mut grads = Vec::with_capacity(backbone.layers.len());
            let mut d_act = head_grads.input;
            for (li, layer) in backbone.layers.iter().enumerate().rev() {
                let out = &acts[li + 1];
                let mut d_pre = d_act;
                for (g, a) in d_pre.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *g *= 1.0 - a * a;
                }
                let g = layer.backward(&acts[li], &d_pre)?;
                d_act = g.input;
                grads.push((g.weight, g.bias));
            }
            grads.reverse();

            let mut params: Vec<&mut DenseMatrix> = Vec::new();
            let mut grad_refs: Vec<&DenseMatrix> = Vec::new();
            for (layer, (gw, gb)) in backbone.layers.iter_mut().zip(&grads) {
                params.push(&mut layer.weight);
                params.push(&mut layer.bias);
                grad_refs.push(gw);
                grad_refs.push(gb);
            }
            params.push(&mut head.weight);
            params.push(&mut head.bias);
            grad_refs.push(&head_grads.weight);
            grad_refs.push(&head_grads.bias);
            opt.step(&mut params, &grad_refs)?;
        }
    }
    let logits = head.forward(&backbone.extract_features(data.inputs())?)?;
    let correct = logits
        .iter_rows()
        .zip(data.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
