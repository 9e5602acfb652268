mod common;

use common::small_config;
use subspace_cl::data::StreamLayout;
use subspace_cl::harness::{
    build_stream, run_experiment, run_pipeline, EnsembleMode, PipelineOptions, RunReport, ScoreKind, TrainedState,
};

fn modes(all: &[EnsembleMode]) -> PipelineOptions {
    PipelineOptions {
        modes: all.to_vec(),
        probe: false,
    }
}

fn without_clock(mut r: RunReport) -> RunReport {
    r.wall_clock_secs = 0.0;
    r
}

#[test]
fn single_task_modes_coincide() {
    let config = small_config(1, 0.3);
    let out = run_pipeline(&config, &modes(&EnsembleMode::ALL)).unwrap();
    let laa: Vec<f64> = out.reports.iter().map(|r| r.metrics.laa).collect();
    assert!(laa.iter().all(|&l| l == laa[0]), "{laa:?}");
}

#[test]
fn zero_noise_expertise_ensemble_is_nearly_perfect() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synthetic.toml");
    let mut config = subspace_cl::harness::ExperimentConfig::load(std::path::Path::new(path)).unwrap();
    match &mut config.stream {
        subspace_cl::harness::StreamConfig::Synthetic(spec) => spec.noise = 0.0,
        other => panic!("shipped config is not synthetic: {other:?}"),
    }
    let report = run_experiment(&config).unwrap();
    assert!(report.metrics.laa >= 0.95, "LAA {}", report.metrics.laa);
}

#[test]
fn first_subspace_only_matches_the_naive_base_run() {
    let config = small_config(4, 0.4);
    let full = run_pipeline(&config, &modes(&[EnsembleMode::Aee, EnsembleMode::Noe])).unwrap();
    let naive = run_pipeline(&config, &modes(&[EnsembleMode::NaiveBase])).unwrap();
    assert_eq!(full.reports[1].accuracy, naive.reports[0].accuracy);
    assert_eq!(full.state.classifiers[0], naive.state.classifiers[0]);
    assert_eq!(naive.state.pool.len(), 1);
    assert_eq!(full.state.pool.len(), 4);
    assert_eq!(naive.state.classifiers.len(), 1);
}

#[test]
fn repeated_runs_agree_exactly() {
    let config = small_config(3, 0.3);
    let a = run_pipeline(&config, &modes(&EnsembleMode::ALL)).unwrap();
    let b = run_pipeline(&config, &modes(&EnsembleMode::ALL)).unwrap();
    for (x, y) in a.reports.into_iter().zip(b.reports) {
        assert_eq!(without_clock(x), without_clock(y));
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let mut config = small_config(3, 0.3);
    let a = run_experiment(&config).unwrap();
    config.seed = 1994;
    let b = run_experiment(&config).unwrap();
    assert_ne!(a.backbone_checksum, b.backbone_checksum);
}

#[test]
fn metric_identities_hold() {
    let config = small_config(4, 0.4);
    let out = run_pipeline(&config, &modes(&EnsembleMode::ALL)).unwrap();
    for r in &out.reports {
        let t = r.step_accuracy.len();
        assert_eq!(r.accuracy.len(), t);
        assert_eq!(r.metrics.laa, r.step_accuracy[t - 1]);
        let iaa = r.step_accuracy.iter().sum::<f64>() / t as f64;
        assert!((r.metrics.iaa - iaa).abs() < 1e-15);
        for (i, row) in r.accuracy.iter().enumerate() {
            assert_eq!(row.len(), i + 1);
            assert!(row.iter().all(|a| (0.0..=1.0).contains(a)));
            // Equal-size test sets make micro and macro coincide.
            assert!((r.step_macro[i] - r.step_accuracy[i]).abs() < 1e-12);
        }
        if r.step_accuracy.windows(2).all(|w| w[1] <= w[0]) {
            assert!(r.metrics.iaa >= r.metrics.laa);
        }
    }
}

#[test]
fn expertise_rows_bracket_first_subspace_and_full_ensemble() {
    let config = small_config(4, 0.4);
    let out = run_pipeline(&config, &modes(&[EnsembleMode::Aee, EnsembleMode::Noe])).unwrap();
    let aee = &out.reports[0];
    let noe = &out.reports[1];
    let table = aee.expertise.as_ref().unwrap();
    assert_eq!(table.accuracy.len(), 4);
    assert_eq!(table.accuracy[0], *noe.accuracy.last().unwrap());
    assert_eq!(table.accuracy[3], *aee.accuracy.last().unwrap());
    assert_eq!(table.overall[3], aee.metrics.laa);
    assert!(noe.expertise.is_none());
}

#[test]
fn gaussian_entries_grow_quadratically() {
    let config = small_config(4, 0.3);
    let out = run_pipeline(&config, &modes(&[EnsembleMode::Aee])).unwrap();
    assert_eq!(out.state.store.len(), 4 * (1 + 2 + 3 + 4));
    assert_eq!(out.reports[0].gaussian_entries, 40);
}

#[test]
fn classifiers_stay_aligned() {
    let config = small_config(3, 0.3);
    let out = run_pipeline(&config, &modes(&[EnsembleMode::Aee])).unwrap();
    for c in &out.state.classifiers {
        assert_eq!(c.num_classes(), 12);
        assert_eq!(c.task_ranges(), &[0..4, 4..8, 8..12]);
    }
}

#[test]
fn backbone_and_pool_match_their_reported_checksums() {
    let config = small_config(3, 0.3);
    let out = run_pipeline(&config, &modes(&[EnsembleMode::Aee])).unwrap();
    assert_eq!(out.state.backbone.checksum(), out.reports[0].backbone_checksum);
    assert_eq!(out.state.pool.checksums(), out.reports[0].module_checksums);
}

#[test]
fn trained_state_round_trips_through_json() {
    let config = small_config(2, 0.3);
    let out = run_pipeline(&config, &modes(&[EnsembleMode::Aee, EnsembleMode::Misaligned])).unwrap();
    let json = serde_json::to_string(&out.state).unwrap();
    let back: TrainedState = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
    assert_eq!(back.classifiers, out.state.classifiers);
    assert_eq!(back.pool, out.state.pool);
}

#[test]
fn logit_scores_change_only_the_fusion_inputs() {
    let mut config = small_config(3, 0.4);
    let probs = run_pipeline(&config, &modes(&[EnsembleMode::Aee, EnsembleMode::Noe])).unwrap();
    config.ensemble.scores = ScoreKind::Logits;
    let logits = run_pipeline(&config, &modes(&[EnsembleMode::Aee, EnsembleMode::Noe])).unwrap();
    assert_eq!(probs.state.classifiers, logits.state.classifiers);
    // A single head's argmax is the same for logits and probabilities.
    assert_eq!(probs.reports[1].accuracy, logits.reports[1].accuracy);
}

#[test]
fn probe_has_one_row_per_subspace() {
    let config = small_config(3, 0.0);
    let out = run_pipeline(
        &config,
        &PipelineOptions {
            modes: vec![EnsembleMode::Noe],
            probe: true,
        },
    )
    .unwrap();
    let probe = out.reports[0].probe.as_ref().unwrap();
    assert_eq!(probe.accuracy.len(), 3);
    assert!(probe.accuracy.iter().all(|r| r.len() == 3));
    for (row, mean) in probe.accuracy.iter().zip(&probe.means) {
        assert!((row.iter().sum::<f64>() / 3.0 - mean).abs() <= 1e-12);
    }
    assert!(probe.diagonal_dominant());
}

#[test]
fn failures_name_the_stage() {
    let mut config = small_config(2, 0.3);
    config.stream = subspace_cl::harness::StreamConfig::Idx {
        train_images: "/nonexistent/train-images".into(),
        train_labels: "/nonexistent/train-labels".into(),
        test_images: "/nonexistent/test-images".into(),
        test_labels: "/nonexistent/test-labels".into(),
        tasks: 2,
        first_task: None,
        pretrain_classes: 0,
        shuffle_seed: None,
    };
    let err = build_stream(&config).unwrap_err().to_string();
    assert!(err.contains("loading IDX training split"), "{err}");
}

#[test]
fn uneven_first_task_layout() {
    let layout = StreamLayout {
        tasks: 10,
        first_task: Some(16),
        pretrain_classes: 0,
    };
    let sizes = layout.task_sizes(196).unwrap();
    assert_eq!(sizes[0], 16);
    assert!(sizes[1..].iter().all(|&s| s == 20));
}

#[test]
fn shipped_configs_parse() {
    for name in ["synthetic.toml", "glyphs.toml"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let config = subspace_cl::harness::ExperimentConfig::load(&path).unwrap();
        config.validate().unwrap();
    }
}
