//! The class-incremental pipeline.
//!
//! For each task `t` in order: train module `P_t`, extract the task's training
//! features in every available subspace, fine-tune each aligned classifier on
//! real current features plus Gaussian replay for older classes, record the
//! task's Gaussians, and evaluate on the test sets of every task seen so far.
//! A single pass can evaluate several ensemble modes at once because the
//! trained state of every mode is a prefix of the full state.

use std::collections::BTreeSet;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EnsembleMode, ExperimentConfig, ScoreKind, StreamConfig};
use super::metrics::{accuracy, compute_metrics, correct, Metrics};
use super::probe::{subspace_probe, ProbeTable};
use super::{AtStage, HarnessError};
use crate::backbone::{build_backbone, Backbone};
use crate::classifiers::{finetune_classifier, ReplayPlan, SubspaceClassifier, TaskHead};
use crate::data::{build_task_stream, gen_synthetic_stream, load_idx, StreamLayout, TaskStream};
use crate::ensemble::{aee_predict_limited, misaligned_predict, no_ensemble_predict, simple_ensemble_predict, ScoreStack};
use crate::gauss_store::GaussStore;
use crate::numeric::{DenseMatrix, RngStream};
use crate::peft::{train_peft_module, PeftPool};

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Modes to evaluate; empty means the config's mode.
    pub modes: Vec<EnsembleMode>,
    /// Run the offline subspace probe after the last task.
    pub probe: bool,
}

/// Everything learned during a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedState {
    pub backbone: Backbone,
    pub pool: PeftPool,
    pub store: GaussStore,
    pub classifiers: Vec<SubspaceClassifier>,
    pub task_heads: Vec<TaskHead>,
}

/// Per-task accuracy after the last task when the expertise ensemble may use
/// only the first `m` subspaces; row `m - 1` holds limit `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertiseTable {
    pub accuracy: Vec<Vec<f64>>,
    /// Accuracy over all classes, one entry per limit.
    pub overall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The configuration as run, with `mode` set to this report's mode.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub mode: EnsembleMode,
    /// `accuracy[i][j]`: accuracy on task `j`'s test set after learning task
    /// `i`, for `j <= i`.
    pub accuracy: Vec<Vec<f64>>,
    /// Accuracy over the pooled test sets of all seen tasks, per step.
    pub step_accuracy: Vec<f64>,
    /// Unweighted mean of the row of `accuracy`, per step.
    pub step_macro: Vec<f64>,
    pub metrics: Metrics,
    pub macro_metrics: Metrics,
    pub wall_clock_secs: f64,
    pub expertise: Option<ExpertiseTable>,
    pub probe: Option<ProbeTable>,
    pub backbone_checksum: String,
    pub module_checksums: Vec<String>,
    pub gaussian_entries: usize,
    pub pretrain_accuracy: Option<f64>,
}

pub struct PipelineOutcome {
    /// One report per requested mode, in request order.
    pub reports: Vec<RunReport>,
    pub state: TrainedState,
}

/// Materialises the configured task stream. Synthetic data is drawn from the
/// run seed; IDX class order uses `shuffle_seed`, defaulting to the run seed.
pub fn build_stream(config: &ExperimentConfig) -> Result<TaskStream, HarnessError> {
    match &config.stream {
        StreamConfig::Synthetic(spec) => {
            gen_synthetic_stream(spec, &RngStream::new(config.seed, "stream")).at(|| "synthetic stream".into())
        }
        StreamConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            tasks,
            first_task,
            pretrain_classes,
            shuffle_seed,
        } => {
            let train = load_idx(train_images, train_labels).at(|| "loading IDX training split".into())?;
            let test = load_idx(test_images, test_labels).at(|| "loading IDX test split".into())?;
            let layout = StreamLayout {
                tasks: *tasks,
                first_task: *first_task,
                pretrain_classes: *pretrain_classes,
            };
            build_task_stream(&train, &test, layout, shuffle_seed.unwrap_or(config.seed))
                .at(|| "building the IDX task stream".into())
        }
    }
}

/// Runs the configured mode end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    let mut out = run_pipeline(config, &PipelineOptions::default())?;
    Ok(out.reports.remove(0))
}

pub fn run_pipeline(config: &ExperimentConfig, options: &PipelineOptions) -> Result<PipelineOutcome, HarnessError> {
    let stream = build_stream(config)?;
    run_on_stream(config, &stream, options)
}

struct Needs {
    full_pool: bool,
    all_classifiers: bool,
    task_heads: bool,
}

impl Needs {
    fn of(modes: &[EnsembleMode]) -> Self {
        let has = |m| modes.contains(&m);
        Self {
            full_pool: modes.iter().any(|&m| m != EnsembleMode::NaiveBase),
            all_classifiers: has(EnsembleMode::Aee) || has(EnsembleMode::Se),
            task_heads: has(EnsembleMode::Misaligned),
        }
    }
}

/// Test-time features, filled in as tasks and subspaces become available.
struct TestCache {
    labels: Vec<Vec<usize>>,
    /// `features[j][k]`: task `j`'s test inputs in subspace `k`.
    features: Vec<Vec<DenseMatrix>>,
    backbone: Vec<DenseMatrix>,
}

impl TestCache {
    fn refresh(&mut self, pool: &PeftPool) -> Result<(), HarnessError> {
        for (j, per_k) in self.features.iter_mut().enumerate() {
            for k in per_k.len()..pool.len() {
                let m = &pool.modules()[k];
                per_k.push(m.forward(&self.backbone[j]).at(|| format!("test features, task {j}, subspace {k}"))?);
            }
        }
        Ok(())
    }
}

fn classifier_scores(
    classifiers: &[SubspaceClassifier],
    features: &[DenseMatrix],
    kind: ScoreKind,
) -> Result<Vec<DenseMatrix>, HarnessError> {
    classifiers
        .iter()
        .map(|c| {
            let x = &features[c.subspace()];
            match kind {
                ScoreKind::Probabilities => c.score(x),
                ScoreKind::Logits => c.logits(x),
            }
            .at(|| format!("scoring with classifier {}", c.subspace()))
        })
        .collect()
}

pub fn run_on_stream(
    config: &ExperimentConfig,
    stream: &TaskStream,
    options: &PipelineOptions,
) -> Result<PipelineOutcome, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let mut modes = options.modes.clone();
    if modes.is_empty() {
        modes.push(config.mode);
    }
    let mut seen = BTreeSet::new();
    modes.retain(|m| seen.insert(*m));
    let needs = Needs::of(&modes);
    let seed = config.seed;
    let tasks = stream.num_tasks();

    let backbone = build_backbone(
        &config.backbone,
        stream.input_dim(),
        stream.image_shape(),
        stream.pretrain(),
        &RngStream::new(seed, "backbone"),
    )
    .at(|| "backbone construction".into())?;
    let dim = backbone.output_dim();

    let mut pool = PeftPool::new();
    let mut store = GaussStore::new();
    let mut classifiers: Vec<SubspaceClassifier> = Vec::new();
    let mut task_heads: Vec<TaskHead> = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::new();
    let mut cache = TestCache {
        labels: Vec::new(),
        features: Vec::new(),
        backbone: Vec::new(),
    };
    // acc[mode][step][task]
    let mut acc: Vec<Vec<Vec<f64>>> = vec![Vec::new(); modes.len()];
    let mut micro: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
    let mut final_scores: Vec<Vec<DenseMatrix>> = Vec::new();

    for t in 0..tasks {
        stream.begin_task(t).at(|| format!("opening task {t}"))?;
        let train = stream.train(t).at(|| format!("reading task {t}"))?;
        let classes = stream.task_classes(t).expect("task index is in range");
        ranges.push(classes.clone());

        if needs.full_pool || t == 0 {
            let outcome = train_peft_module(
                train,
                classes.clone(),
                &backbone,
                &config.peft,
                t,
                &RngStream::new(seed, format!("peft/task{t}")),
            )
            .at(|| format!("module training, task {t}"))?;
            pool.push(outcome.module).at(|| format!("module pool, task {t}"))?;
        }

        let base = backbone.extract_features(train.inputs()).at(|| format!("backbone features, task {t}"))?;
        let feats: Vec<DenseMatrix> = pool
            .modules()
            .iter()
            .map(|m| m.forward(&base))
            .collect::<Result<_, _>>()
            .at(|| format!("subspace features, task {t}"))?;

        let wanted = if needs.all_classifiers { t + 1 } else { 1 };
        while classifiers.len() < wanted {
            let mut c = SubspaceClassifier::new(classifiers.len(), dim);
            for r in &ranges[..t] {
                c.expand_head(r.len()).at(|| format!("classifier creation, task {t}"))?;
            }
            classifiers.push(c);
        }
        for c in &mut classifiers {
            c.expand_head(classes.len()).at(|| format!("head expansion, task {t}"))?;
        }
        let plan = ReplayPlan::balanced(train.len(), classes.len());
        classifiers
            .par_iter_mut()
            .map(|c| {
                let k = c.subspace();
                finetune_classifier(
                    c,
                    &feats[k],
                    train.labels(),
                    &store,
                    0..classes.start,
                    &plan,
                    &config.classifier,
                    &RngStream::new(seed, format!("classifier/k{k}/task{t}")),
                )
                .map(|_| ())
                .at(|| format!("classifier fine-tuning, subspace {k}, task {t}"))
            })
            .collect::<Result<Vec<()>, _>>()?;

        let refs: Vec<&DenseMatrix> = feats.iter().collect();
        store
            .record_task_gaussians(t, classes.clone(), &refs, train.labels())
            .at(|| format!("recording Gaussians, task {t}"))?;

        if needs.task_heads {
            let head = TaskHead::train(
                t,
                classes.clone(),
                &feats[t],
                train.labels(),
                &config.classifier,
                &RngStream::new(seed, format!("misaligned/task{t}")),
            )
            .at(|| format!("task head training, task {t}"))?;
            task_heads.push(head);
        }

        let test = stream.test(t).at(|| format!("reading task {t} test split"))?;
        cache.backbone.push(backbone.extract_features(test.inputs()).at(|| format!("test backbone features, task {t}"))?);
        cache.labels.push(test.labels().to_vec());
        cache.features.push(Vec::new());
        cache.refresh(&pool)?;

        let scores: Vec<Vec<DenseMatrix>> = cache
            .features
            .iter()
            .map(|f| classifier_scores(&classifiers, f, config.ensemble.scores))
            .collect::<Result<_, _>>()?;
        for (mi, &mode) in modes.iter().enumerate() {
            let mut row = Vec::with_capacity(t + 1);
            let (mut hits, mut total) = (0, 0);
            for j in 0..=t {
                let truth = &cache.labels[j];
                let preds = match mode {
                    EnsembleMode::Misaligned => {
                        let f: Vec<&DenseMatrix> = cache.features[j][..=t].iter().collect();
                        misaligned_predict(&task_heads, &f)
                    }
                    _ => {
                        let stack = ScoreStack::new(scores[j].clone(), ranges.clone())
                            .at(|| format!("score stack, task {j}"))?;
                        match mode {
                            EnsembleMode::Aee => aee_predict_limited(&stack, t + 1),
                            EnsembleMode::Se => simple_ensemble_predict(&stack),
                            _ => no_ensemble_predict(&stack),
                        }
                    }
                }
                .at(|| format!("{mode} evaluation after task {t}"))?;
                row.push(accuracy(&preds, truth));
                hits += correct(&preds, truth);
                total += truth.len();
            }
            acc[mi].push(row);
            micro[mi].push(hits as f64 / total as f64);
        }
        if t + 1 == tasks {
            final_scores = scores;
        }
    }

    let expertise = if modes.contains(&EnsembleMode::Aee) && config.ensemble.expertise {
        Some(expertise_table(&final_scores, &ranges, &cache.labels)?)
    } else {
        None
    };
    let probe = if options.probe {
        Some(subspace_probe(&pool, &backbone, stream, &config.classifier, seed)?)
    } else {
        None
    };

    let wall_clock_secs = started.elapsed().as_secs_f64();
    let module_checksums = pool.checksums();
    let reports = modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let step_macro: Vec<f64> = acc[mi].iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
            let mut echoed = config.clone();
            echoed.mode = mode;
            RunReport {
                config: echoed,
                seed,
                mode,
                metrics: compute_metrics(&micro[mi]).expect("at least one task"),
                macro_metrics: compute_metrics(&step_macro).expect("at least one task"),
                accuracy: acc[mi].clone(),
                step_accuracy: micro[mi].clone(),
                step_macro,
                wall_clock_secs,
                expertise: if mode == EnsembleMode::Aee { expertise.clone() } else { None },
                probe: probe.clone(),
                backbone_checksum: backbone.checksum(),
                module_checksums: module_checksums.clone(),
                gaussian_entries: store.len(),
                pretrain_accuracy: backbone.pretrain_accuracy(),
            }
        })
        .collect();

    Ok(PipelineOutcome {
        reports,
        state: TrainedState {
            backbone,
            pool,
            store,
            classifiers,
            task_heads,
        },
    })
}

fn expertise_table(
    scores: &[Vec<DenseMatrix>],
    ranges: &[Range<usize>],
    labels: &[Vec<usize>],
) -> Result<ExpertiseTable, HarnessError> {
    let tasks = ranges.len();
    let mut table = ExpertiseTable {
        accuracy: Vec::with_capacity(tasks),
        overall: Vec::with_capacity(tasks),
    };
    for m in 1..=tasks {
        let mut row = Vec::with_capacity(tasks);
        let (mut hits, mut total) = (0, 0);
        for (j, truth) in labels.iter().enumerate() {
            let stack = ScoreStack::new(scores[j].clone(), ranges.to_vec()).at(|| "expertise analysis".into())?;
            let preds = aee_predict_limited(&stack, m).at(|| format!("expertise analysis, {m} subspaces"))?;
            row.push(accuracy(&preds, truth));
            hits += correct(&preds, truth);
            total += truth.len();
        }
        table.accuracy.push(row);
        table.overall.push(hits as f64 / total as f64);
    }
    Ok(table)
}
