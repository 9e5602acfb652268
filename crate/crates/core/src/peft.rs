//! Per-task residual modules on top of the frozen backbone.
//!
//! A module maps `d`-dimensional backbone features to `d` dimensions:
//!
//! * adapter: `x + U · tanh(D · x)`
//! * lora:    `x + B · (A · x)`
//!
//! `D`/`A` are `r × d` and `U`/`B` are `d × r`. The up-projection starts at zero,
//! so a fresh module is the identity on backbone features.
//!
//! Training uses a temporary task head over the task's own classes and, when
//! `alpha > 0`, a 4-way rotation head fed every image at all four quarter
//! turns. Both heads are dropped once the module is trained.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{Backbone, BackboneError};
use crate::data::{rotate_inputs, DataError, LabeledDataset};
use crate::numeric::{
    argmax, checksum, softmax_cross_entropy, DenseMatrix, Linear, NumericError, OptimState, OptimizerKind,
    RngStream,
};

pub const ROTATIONS: usize = 4;

#[derive(Debug, Error)]
pub enum PeftError {
    #[error("invalid rank {rank} for dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },
    #[error("SSL requires image inputs")]
    SslRequiresImages,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("label {label} outside task classes {range:?}")]
    ForeignLabel { label: usize, range: Range<usize> },
    #[error("pool holds {len} modules; module for task {task} cannot be appended")]
    OutOfOrder { len: usize, task: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeftKind {
    Adapter,
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeftModule {
    kind: PeftKind,
    task: usize,
    /// `r × d`
    down: DenseMatrix,
    /// `d × r`
    up: DenseMatrix,
}

pub struct PeftGrads {
    pub down: DenseMatrix,
    pub up: DenseMatrix,
    pub input: DenseMatrix,
}

/// Intermediate values of a forward pass needed by the backward pass.
pub struct ForwardCache {
    hidden: DenseMatrix,
}

impl PeftModule {
    pub fn init(kind: PeftKind, dim: usize, rank: usize, task: usize, rng: &mut RngStream) -> Result<Self, PeftError> {
        if rank == 0 || rank > dim {
            return Err(PeftError::InvalidRank { rank, dim });
        }
        let std = (1.0 / dim as f64).sqrt();
        Ok(Self {
            kind,
            task,
            down: DenseMatrix::from_fn(rank, dim, |_, _| rng.normal(0.0, std)),
            up: DenseMatrix::zeros(dim, rank),
        })
    }

    /// Builds a module from explicit projections (`down` is `r × d`, `up` is `d × r`).
    pub fn from_parts(kind: PeftKind, task: usize, down: DenseMatrix, up: DenseMatrix) -> Result<Self, PeftError> {
        let (rank, dim) = down.shape();
        if up.shape() != (dim, rank) || rank == 0 || rank > dim {
            return Err(PeftError::InvalidRank { rank, dim });
        }
        Ok(Self { kind, task, down, up })
    }

    pub fn kind(&self) -> PeftKind {
        self.kind
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.down.cols()
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn down(&self) -> &DenseMatrix {
        &self.down
    }

    pub fn up(&self) -> &DenseMatrix {
        &self.up
    }

    pub fn param_count(&self) -> usize {
        self.down.as_slice().len() + self.up.as_slice().len()
    }

    pub fn checksum(&self) -> String {
        checksum([&self.down, &self.up])
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix, PeftError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache), PeftError> {
        let pre = x.matmul_t(&self.down)?;
        let hidden = match self.kind {
            PeftKind::Adapter => pre.map(f64::tanh),
            PeftKind::Lora => pre,
        };
        let mut out = hidden.matmul_t(&self.up)?;
        out.add_assign(x)?;
        Ok((out, ForwardCache { hidden }))
    }

    /// Parameter and input gradients given `∂L/∂output`.
    pub fn backward(&self, x: &DenseMatrix, cache: &ForwardCache, d_out: &DenseMatrix) -> Result<PeftGrads, PeftError> {
        let up = d_out.t_matmul(&cache.hidden)?;
        let mut d_pre = d_out.matmul(&self.up)?;
        if self.kind == PeftKind::Adapter {
            for (g, h) in d_pre.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
                *g *= 1.0 - h * h;
            }
        }
        let down = d_pre.t_matmul(x)?;
        let mut input = d_pre.matmul(&self.down)?;
        input.add_assign(d_out)?;
        Ok(PeftGrads { down, up, input })
    }

    fn params_mut(&mut self) -> [&mut DenseMatrix; 2] {
        [&mut self.down, &mut self.up]
    }
}

/// Append-only pool of trained modules, one per task in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeftPool {
    modules: Vec<PeftModule>,
}

impl PeftPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, module: PeftModule) -> Result<(), PeftError> {
        if module.task != self.modules.len() {
            return Err(PeftError::OutOfOrder {
                len: self.modules.len(),
                task: module.task,
            });
        }
        self.modules.push(module);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&PeftModule> {
        self.modules.get(k)
    }

    pub fn modules(&self) -> &[PeftModule] {
        &self.modules
    }

    pub fn checksums(&self) -> Vec<String> {
        self.modules.iter().map(PeftModule::checksum).collect()
    }
}

/// Temporary heads used only while training one module.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxHeads {
    pub task: Linear,
    pub ssl: Linear,
}

impl AuxHeads {
    pub fn init(dim: usize, classes: usize, rng: &RngStream) -> Self {
        Self {
            task: Linear::random(dim, classes, 0.01, 0.0, &mut rng.derive("task-head")),
            ssl: Linear::random(dim, ROTATIONS, 0.01, 0.0, &mut rng.derive("ssl-head")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeftTrainConfig {
    #[serde(default = "default_kind")]
    pub kind: PeftKind,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Weight of the rotation loss.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// L2 penalty on the module parameters.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_kind() -> PeftKind {
    PeftKind::Adapter
}
fn default_rank() -> usize {
    16
}
fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    64
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl Default for PeftTrainConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            rank: default_rank(),
            alpha: 0.0,
            epochs: default_epochs(),
            lr: default_lr(),
            batch: default_batch(),
            optimizer: default_optimizer(),
            weight_decay: 0.0,
        }
    }
}

impl PeftTrainConfig {
    pub fn validate(&self) -> Result<(), PeftError> {
        let bad = |m: &str| Err(PeftError::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }
}

/// Rotated views of a batch: the batch's features at every quarter turn,
/// stacked, with the turn count as label.
pub struct RotationBatch<'a> {
    pub features: &'a DenseMatrix,
    pub labels: &'a [usize],
}

/// Gradients of the composite loss for every trainable tensor.
pub struct CompositeGrads {
    pub down: DenseMatrix,
    pub up: DenseMatrix,
    pub task_weight: DenseMatrix,
    pub task_bias: DenseMatrix,
    pub ssl_weight: DenseMatrix,
    pub ssl_bias: DenseMatrix,
}

/// `CE(task head ∘ module, y) + α · CE(ssl head ∘ module on rotations, turns)`
/// plus `weight_decay/2 · ‖module params‖²`, with exact gradients.
pub fn composite_loss(
    module: &PeftModule,
    heads: &AuxHeads,
    features: &DenseMatrix,
    labels: &[usize],
    rotated: Option<RotationBatch<'_>>,
    alpha: f64,
    weight_decay: f64,
) -> Result<(f64, CompositeGrads), PeftError> {
    let (out, cache) = module.forward_cached(features)?;
    let (mut loss, d_logits) = softmax_cross_entropy(&heads.task.forward(&out)?, labels)?;
    let task_g = heads.task.backward(&out, &d_logits)?;
    let mut g = module.backward(features, &cache, &task_g.input)?;
    let mut ssl_weight = DenseMatrix::zeros(ROTATIONS, module.dim());
    let mut ssl_bias = DenseMatrix::zeros(1, ROTATIONS);

    if let Some(rot) = rotated.filter(|_| alpha > 0.0) {
        let (rot_out, rot_cache) = module.forward_cached(rot.features)?;
        let (ssl_loss, mut d_ssl) = softmax_cross_entropy(&heads.ssl.forward(&rot_out)?, rot.labels)?;
        loss += alpha * ssl_loss;
        d_ssl.scale(alpha);
        let ssl_g = heads.ssl.backward(&rot_out, &d_ssl)?;
        let rot_g = module.backward(rot.features, &rot_cache, &ssl_g.input)?;
        g.down.add_assign(&rot_g.down)?;
        g.up.add_assign(&rot_g.up)?;
        ssl_weight = ssl_g.weight;
        ssl_bias = ssl_g.bias;
    }

    if weight_decay > 0.0 {
        for (grad, param) in [(&mut g.down, &module.down), (&mut g.up, &module.up)] {
            loss += 0.5 * weight_decay * param.as_slice().iter().map(|p| p * p).sum::<f64>();
            for (gv, pv) in grad.as_mut_slice().iter_mut().zip(param.as_slice()) {
                *gv += weight_decay * pv;
            }
        }
    }

    Ok((
        loss,
        CompositeGrads {
            down: g.down,
            up: g.up,
            task_weight: task_g.weight,
            task_bias: task_g.bias,
            ssl_weight,
            ssl_bias,
        },
    ))
}

/// A trained module together with what was discarded on the way.
pub struct PeftTrainOutcome {
    pub module: PeftModule,
    pub heads: AuxHeads,
    /// Mean composite loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Task-head accuracy on the training data after the last epoch.
    pub train_accuracy: f64,
}

/// Trains the module for task `task` on `data`, whose labels must lie in
/// `classes`. Backbone features (and rotated-image features when `alpha > 0`)
/// are extracted once up front.
pub fn train_peft_module(
    data: &LabeledDataset,
    classes: Range<usize>,
    backbone: &Backbone,
    config: &PeftTrainConfig,
    task: usize,
    rng: &RngStream,
) -> Result<PeftTrainOutcome, PeftError> {
    config.validate()?;
    if config.alpha > 0.0 && data.image_shape().is_none() {
        return Err(PeftError::SslRequiresImages);
    }
    let local: Vec<usize> = data
        .labels()
        .iter()
        .map(|&l| {
            if classes.contains(&l) {
                Ok(l - classes.start)
            } else {
                Err(PeftError::ForeignLabel {
                    label: l,
                    range: classes.clone(),
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let features = backbone.extract_features(data.inputs())?;
    let rotated: Vec<DenseMatrix> = if config.alpha > 0.0 {
        (0..ROTATIONS)
            .map(|k| {
                if k == 0 {
                    Ok(features.clone())
                } else {
                    Ok(backbone.extract_features(&rotate_inputs(data, k)?)?)
                }
            })
            .collect::<Result<_, PeftError>>()?
    } else {
        Vec::new()
    };

    let dim = backbone.output_dim();
    let mut module = PeftModule::init(config.kind, dim, config.rank, task, &mut rng.derive("module-init"))?;
    let mut heads = AuxHeads::init(dim, classes.len(), &rng.derive("heads"));
    let mut opt = OptimState::new(config.optimizer, config.lr)?;
    let mut order = rng.derive("order");

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let perm = order.permutation(data.len());
        let mut total = 0.0;
        for idx in perm.chunks(config.batch) {
            let x = features.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| local[i]).collect();
            let rot_parts: Vec<DenseMatrix> = rotated.iter().map(|r| r.select_rows(idx)).collect();
            let rot_x;
            let rot_y: Vec<usize>;
            let rot_batch = if rotated.is_empty() {
                None
            } else {
                rot_x = DenseMatrix::vstack(&rot_parts.iter().collect::<Vec<_>>())?;
                rot_y = (0..ROTATIONS).flat_map(|k| std::iter::repeat_n(k, idx.len())).collect();
                Some(RotationBatch {
                    features: &rot_x,
                    labels: &rot_y,
                })
            };
            let (loss, g) = composite_loss(&module, &heads, &x, &y, rot_batch, config.alpha, config.weight_decay)?;
            total += loss * idx.len() as f64;
            let [down, up] = module.params_mut();
            let mut params = [
                down,
                up,
                &mut heads.task.weight,
                &mut heads.task.bias,
                &mut heads.ssl.weight,
                &mut heads.ssl.bias,
            ];
            opt.step(
                &mut params,
                &[&g.down, &g.up, &g.task_weight, &g.task_bias, &g.ssl_weight, &g.ssl_bias],
            )?;
        }
        epoch_losses.push(total / data.len() as f64);
    }

    let logits = heads.task.forward(&module.forward(&features)?)?;
    let correct = logits
        .iter_rows()
        .zip(&local)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(PeftTrainOutcome {
        module,
        heads,
        epoch_losses,
        train_accuracy: correct as f64 / data.len() as f64,
    })
}
