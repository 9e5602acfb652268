//! Report files.
//!
//! | file            | columns                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | `metrics.csv`   | `metric,step,value`                                        |
//! | `matrix.csv`    | `after_task,task_1..task_T,micro,macro`                    |
//! | `probe.csv`     | `subspace,task_1..task_T,mean`                             |
//! | `expertise.csv` | `subspaces,task_1..task_T,overall`                         |
//! | `run_meta.toml` | seed, mode, timing, checksums and the configuration echo  |
//!
//! Tasks and subspaces are numbered from 1 in every file. Numbers are written
//! in the shortest form that parses back to the same `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EnsembleMode, ExperimentConfig};
use super::experiment::{RunReport, TrainedState};
use super::metrics::Metrics;
use super::HarnessError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const EXPERTISE_FILE: &str = "expertise.csv";
pub const META_FILE: &str = "run_meta.toml";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    seed: u64,
    mode: EnsembleMode,
    version: String,
    wall_clock_secs: f64,
    backbone_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pretrain_accuracy: Option<f64>,
    gaussian_entries: usize,
    module_checksums: Vec<String>,
    config: ExperimentConfig,
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new().flexible(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn task_header(first: &str, tasks: usize, last: &[&str]) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=tasks).map(|t| format!("task_{t}")))
        .chain(last.iter().map(|s| s.to_string()))
        .collect()
}

/// Writes the report into `dir`, which must exist. `state`, when given, is
/// saved as JSON next to the tables.
pub fn emit_report(report: &RunReport, dir: &Path, state: Option<&TrainedState>) -> Result<ReportFiles, HarnessError> {
    let tasks = report.accuracy.len();
    let mut files = Vec::new();

    let mut rows = Vec::new();
    for (t, a) in report.step_accuracy.iter().enumerate() {
        rows.push(vec!["accuracy".into(), (t + 1).to_string(), num(*a)]);
    }
    for (t, a) in report.step_macro.iter().enumerate() {
        rows.push(vec!["macro_accuracy".into(), (t + 1).to_string(), num(*a)]);
    }
    for (name, v) in [
        ("laa", report.metrics.laa),
        ("iaa", report.metrics.iaa),
        ("laa_macro", report.macro_metrics.laa),
        ("iaa_macro", report.macro_metrics.iaa),
    ] {
        rows.push(vec![name.into(), String::new(), num(v)]);
    }
    let path = dir.join(METRICS_FILE);
    write_csv(&path, &["metric".into(), "step".into(), "value".into()], &rows)?;
    files.push(path);

    let rows: Vec<Vec<String>> = report
        .accuracy
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![(i + 1).to_string()];
            r.extend((0..tasks).map(|j| row.get(j).map_or_else(String::new, |a| num(*a))));
            r.push(num(report.step_accuracy[i]));
            r.push(num(report.step_macro[i]));
            r
        })
        .collect();
    let path = dir.join(MATRIX_FILE);
    write_csv(&path, &task_header("after_task", tasks, &["micro", "macro"]), &rows)?;
    files.push(path);

    if let Some(probe) = &report.probe {
        let rows: Vec<Vec<String>> = probe
            .accuracy
            .iter()
            .zip(&probe.means)
            .enumerate()
            .map(|(k, (row, mean))| {
                std::iter::once((k + 1).to_string())
                    .chain(row.iter().map(|a| num(*a)))
                    .chain(std::iter::once(num(*mean)))
                    .collect()
            })
            .collect();
        let path = dir.join(PROBE_FILE);
        write_csv(&path, &task_header("subspace", tasks, &["mean"]), &rows)?;
        files.push(path);
    }

    if let Some(exp) = &report.expertise {
        let rows: Vec<Vec<String>> = exp
            .accuracy
            .iter()
            .zip(&exp.overall)
            .enumerate()
            .map(|(m, (row, all))| {
                std::iter::once((m + 1).to_string())
                    .chain(row.iter().map(|a| num(*a)))
                    .chain(std::iter::once(num(*all)))
                    .collect()
            })
            .collect();
        let path = dir.join(EXPERTISE_FILE);
        write_csv(&path, &task_header("subspaces", tasks, &["overall"]), &rows)?;
        files.push(path);
    }

    let meta = RunMeta {
        seed: report.seed,
        mode: report.mode,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_secs: report.wall_clock_secs,
        backbone_checksum: report.backbone_checksum.clone(),
        pretrain_accuracy: report.pretrain_accuracy,
        gaussian_entries: report.gaussian_entries,
        module_checksums: report.module_checksums.clone(),
        config: report.config.clone(),
    };
    let path = dir.join(META_FILE);
    let text = toml::to_string(&meta).map_err(|e| HarnessError::Report {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text).map_err(HarnessError::io(&path))?;
    files.push(path);

    if let Some(state) = state {
        let path = dir.join(STATE_FILE);
        let json = serde_json::to_vec(state).map_err(|e| HarnessError::Report {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(&path, json).map_err(HarnessError::io(&path))?;
        files.push(path);
    }

    Ok(ReportFiles {
        dir: dir.to_path_buf(),
        files,
    })
}

/// Writes the report to a scratch directory beside `target` and renames it
/// into place, so a failed write never leaves a partial `target`.
pub fn publish_report(
    report: &RunReport,
    target: &Path,
    state: Option<&TrainedState>,
    force: bool,
) -> Result<ReportFiles, HarnessError> {
    if target.exists() && !force {
        return Err(HarnessError::OutputExists(target.to_path_buf()));
    }
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(HarnessError::io(&parent))?;
    let scratch = tempfile::Builder::new()
        .prefix(".partial-")
        .tempdir_in(&parent)
        .map_err(HarnessError::io(&parent))?;
    emit_report(report, scratch.path(), state)?;
    if target.exists() {
        fs::remove_dir_all(target).map_err(HarnessError::io(target))?;
    }
    let scratch = scratch.keep();
    fs::rename(&scratch, target).map_err(HarnessError::io(target))?;
    let files = fs::read_dir(target)
        .map_err(HarnessError::io(target))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    Ok(ReportFiles {
        dir: target.to_path_buf(),
        files,
    })
}

/// The parts of a report directory needed to recompute and display metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredReport {
    pub step_accuracy: Vec<f64>,
    pub step_macro: Vec<f64>,
    pub metrics: Metrics,
    pub macro_metrics: Metrics,
    /// Lower-triangular `accuracy[i][j]`, `j <= i`.
    pub accuracy: Vec<Vec<f64>>,
    pub seed: u64,
    pub mode: EnsembleMode,
    pub wall_clock_secs: f64,
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), HarnessError> {
    let bad = |reason: String| HarnessError::Report {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok((header, rows))
}

pub fn read_report(dir: &Path) -> Result<StoredReport, HarnessError> {
    let metrics_path = dir.join(METRICS_FILE);
    let bad = |path: &Path, reason: String| HarnessError::Report {
        path: path.to_path_buf(),
        reason,
    };
    let parse = |path: &Path, s: &str| -> Result<f64, HarnessError> {
        s.parse::<f64>().map_err(|e| bad(path, format!("{s:?}: {e}")))
    };

    let (header, rows) = read_rows(&metrics_path)?;
    if header != ["metric", "step", "value"] {
        return Err(bad(&metrics_path, format!("unexpected header {header:?}")));
    }
    let (mut step_accuracy, mut step_macro) = (Vec::new(), Vec::new());
    let mut scalars = std::collections::BTreeMap::new();
    for row in &rows {
        let value = parse(&metrics_path, &row[2])?;
        match row[0].as_str() {
            "accuracy" => step_accuracy.push(value),
            "macro_accuracy" => step_macro.push(value),
            name => {
                scalars.insert(name.to_string(), value);
            }
        }
    }
    let scalar = |name: &str| {
        scalars
            .get(name)
            .copied()
            .ok_or_else(|| bad(&metrics_path, format!("missing {name}")))
    };
    let metrics = Metrics {
        laa: scalar("laa")?,
        iaa: scalar("iaa")?,
    };
    let macro_metrics = Metrics {
        laa: scalar("laa_macro")?,
        iaa: scalar("iaa_macro")?,
    };

    let matrix_path = dir.join(MATRIX_FILE);
    let (header, rows) = read_rows(&matrix_path)?;
    let tasks = header.len().saturating_sub(3);
    let mut accuracy = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let cells = &row[1..=tasks];
        accuracy.push(
            cells[..=i.min(tasks.saturating_sub(1))]
                .iter()
                .map(|c| parse(&matrix_path, c))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(HarnessError::io(&meta_path))?;
    let meta: RunMeta = toml::from_str(&text).map_err(|e| bad(&meta_path, e.to_string()))?;

    Ok(StoredReport {
        step_accuracy,
        step_macro,
        metrics,
        macro_metrics,
        accuracy,
        seed: meta.seed,
        mode: meta.mode,
        wall_clock_secs: meta.wall_clock_secs,
    })
}
