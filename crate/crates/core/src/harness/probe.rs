//! Offline diagnostic: how well each frozen subspace separates every task.
//!
//! For each subspace `k`, a fresh linear classifier is trained on the training
//! data of all tasks at once and scored on each task's test set. This reads
//! every task through [`TaskStream::offline_tasks`] and is not a legal
//! continual-learning path.

use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::{AtStage, HarnessError};
use crate::backbone::Backbone;
use crate::classifiers::{finetune_classifier, ClassifierTrainConfig, ReplayPlan, SubspaceClassifier};
use crate::data::TaskStream;
use crate::gauss_store::GaussStore;
use crate::numeric::{DenseMatrix, RngStream};
use crate::peft::PeftPool;

/// `accuracy[k][t]` is the probe accuracy of subspace `k` on task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub accuracy: Vec<Vec<f64>>,
    /// Row means of `accuracy`.
    pub means: Vec<f64>,
}

impl ProbeTable {
    /// Whether every subspace `k < T` scores highest (ties allowed) on task `k`.
    pub fn diagonal_dominant(&self) -> bool {
        self.accuracy.iter().enumerate().all(|(k, row)| {
            k >= row.len() || row.iter().all(|&a| a <= row[k])
        })
    }
}

pub fn subspace_probe(
    pool: &PeftPool,
    backbone: &Backbone,
    stream: &TaskStream,
    config: &ClassifierTrainConfig,
    seed: u64,
) -> Result<ProbeTable, HarnessError> {
    let tasks = stream.offline_tasks();
    let extract = |x: &DenseMatrix| backbone.extract_features(x).at(|| "probe backbone features".into());
    let train_base = tasks.iter().map(|t| extract(t.train.inputs())).collect::<Result<Vec<_>, _>>()?;
    let test_base = tasks.iter().map(|t| extract(t.test.inputs())).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = tasks.iter().flat_map(|t| t.train.labels().iter().copied()).collect();
    let empty = GaussStore::new();
    let plan = ReplayPlan {
        real_fraction: 1.0,
        synthetic_per_class: 0,
    };

    let mut table = ProbeTable {
        accuracy: Vec::with_capacity(pool.len()),
        means: Vec::with_capacity(pool.len()),
    };
    for (k, module) in pool.modules().iter().enumerate() {
        let stage = || format!("probe of subspace {k}");
        let parts = train_base.iter().map(|b| module.forward(b)).collect::<Result<Vec<_>, _>>().at(stage)?;
        let train = DenseMatrix::vstack(&parts.iter().collect::<Vec<_>>()).at(stage)?;
        let mut clf = SubspaceClassifier::new(k, backbone.output_dim());
        for t in tasks {
            clf.expand_head(t.classes.len()).at(stage)?;
        }
        finetune_classifier(
            &mut clf,
            &train,
            &labels,
            &empty,
            0..0,
            &plan,
            config,
            &RngStream::new(seed, format!("probe/k{k}")),
        )
        .at(stage)?;
        let mut row = Vec::with_capacity(tasks.len());
        for (t, base) in tasks.iter().zip(&test_base) {
            let preds = clf.predict(&module.forward(base).at(stage)?).at(stage)?;
            row.push(accuracy(&preds, t.test.labels()));
        }
        table.means.push(row.iter().sum::<f64>() / row.len() as f64);
        table.accuracy.push(row);
    }
    Ok(table)
}
