mod common;

use std::fs;

use subspace_cl::harness::{compute_metrics, emit_report, read_report, run_pipeline, EnsembleMode, PipelineOptions};

fn report() -> subspace_cl::harness::RunReport {
    let config = common::small_config(4, 0.4);
    let opts = PipelineOptions {
        modes: vec![EnsembleMode::Aee],
        probe: true,
    };
    run_pipeline(&config, &opts).unwrap().reports.remove(0)
}

#[test]
fn round_trip_recovers_metrics_exactly() {
    let r = report();
    let tmp = tempfile::tempdir().unwrap();
    emit_report(&r, tmp.path(), None).unwrap();
    let back = read_report(tmp.path()).unwrap();
    assert_eq!(back.metrics, r.metrics);
    assert_eq!(back.macro_metrics, r.macro_metrics);
    assert_eq!(back.step_accuracy, r.step_accuracy);
    assert_eq!(back.accuracy, r.accuracy);
    assert_eq!(back.mode, r.mode);
    assert_eq!(back.seed, r.seed);
}

#[test]
fn headers_are_fixed() {
    let r = report();
    let tmp = tempfile::tempdir().unwrap();
    emit_report(&r, tmp.path(), None).unwrap();
    let first = |f: &str| fs::read_to_string(tmp.path().join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first("metrics.csv"), "metric,step,value");
    assert_eq!(first("matrix.csv"), "after_task,task_1,task_2,task_3,task_4,micro,macro");
    assert_eq!(first("probe.csv"), "subspace,task_1,task_2,task_3,task_4,mean");
    assert_eq!(first("expertise.csv"), "subspaces,task_1,task_2,task_3,task_4,overall");
}

#[test]
fn matrix_file_reproduces_the_headline_metrics() {
    let r = report();
    let tmp = tempfile::tempdir().unwrap();
    emit_report(&r, tmp.path(), None).unwrap();
    let mut rdr = csv::Reader::from_path(tmp.path().join("matrix.csv")).unwrap();
    let micro_col = rdr.headers().unwrap().iter().position(|h| h == "micro").unwrap();
    let micro: Vec<f64> = rdr.records().map(|row| row.unwrap()[micro_col].parse().unwrap()).collect();
    assert_eq!(compute_metrics(&micro).unwrap(), r.metrics);
}
