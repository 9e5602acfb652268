mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use subspace_cl::harness::{mean_std, read_report};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subspace-cl"));
    c.env_remove("SUBSPACE_CL_OUT");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, tasks: usize) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, common::small_toml(tasks, 0.3)).unwrap();
    path
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("run").output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--config"), "{err}");

    let out = bin().args(["run", "--config", "/nonexistent/config.toml"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn no_subcommand_fails() {
    assert!(!bin().output().unwrap().status.success());
}

#[test]
fn run_writes_a_complete_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 3);
    let out_dir = tmp.path().join("run");
    let stdout = ok(bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .arg("--save-state")
        .output()
        .unwrap());
    assert!(stdout.contains("LAA"), "{stdout}");
    for f in ["metrics.csv", "matrix.csv", "expertise.csv", "run_meta.toml", "state.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".partial"))
        .collect();
    assert!(leftovers.is_empty());

    let stored = read_report(&out_dir).unwrap();
    assert_eq!(stored.step_accuracy.len(), 3);
    assert_eq!(stored.seed, 1993);

    let again = bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert!(!again.status.success(), "existing output must need --force");
    ok(bin()
        .args(["run", "--force", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap());

    let shown = ok(bin().arg("inspect").arg(&out_dir).output().unwrap());
    assert!(shown.contains("LAA"), "{shown}");
}

#[test]
fn mode_changes_only_evaluation_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 3);
    for mode in ["aee", "noe"] {
        ok(bin()
            .args(["run", "--mode", mode, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join(mode))
            .output()
            .unwrap());
    }
    let meta = |m: &str| -> toml::Table { fs::read_to_string(tmp.path().join(m).join("run_meta.toml")).unwrap().parse().unwrap() };
    let (a, n) = (meta("aee"), meta("noe"));
    for key in ["backbone_checksum", "module_checksums", "gaussian_entries", "seed"] {
        assert_eq!(a.get(key), n.get(key), "{key}");
    }
    assert_ne!(a.get("mode"), n.get("mode"));
}

#[test]
fn env_var_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 2);
    let root = tmp.path().join("root");
    ok(bin()
        .env("SUBSPACE_CL_OUT", &root)
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap());
    assert!(root.join("aee-seed1993").join("metrics.csv").is_file());
}

#[test]
fn sweep_summarises_across_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 2);
    let out_dir = tmp.path().join("sweep");
    ok(bin()
        .args(["sweep", "--seeds", "1993,1994,1995", "--modes", "aee,noe", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap());

    let mut rdr = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let mode = &row[0];
        let laa: Vec<f64> = [1993, 1994, 1995]
            .iter()
            .map(|s| {
                read_report(&out_dir.join(format!("{mode}_alpha{}_seed{s}", &row[1])))
                    .unwrap()
                    .metrics
                    .laa
            })
            .collect();
        let (m, s) = mean_std(&laa);
        assert_eq!(&row[2], "3");
        assert_eq!(row[3].parse::<f64>().unwrap(), m);
        assert_eq!(row[4].parse::<f64>().unwrap(), s);
    }
    let shown = ok(bin().arg("inspect").arg(&out_dir).output().unwrap());
    assert!(shown.contains("laa_mean"));
}

#[test]
fn probe_writes_one_row_per_subspace() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 3);
    let out_dir = tmp.path().join("probe");
    ok(bin().args(["probe", "--config"]).arg(&config).arg("--out").arg(&out_dir).output().unwrap());
    let text = fs::read_to_string(out_dir.join("probe.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn gen_idx_writes_loadable_files() {
    let tmp = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["gen-idx", "--classes", "6", "--train-per-class", "5", "--test-per-class", "2", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap());
    for f in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "test-images-idx3-ubyte", "test-labels-idx1-ubyte"] {
        assert!(tmp.path().join(f).is_file(), "missing {f}");
    }
    let labels = fs::read(tmp.path().join("train-labels-idx1-ubyte")).unwrap();
    assert_eq!(&labels[..4], &[0, 0, 8, 1]);
    assert_eq!(u32::from_be_bytes(labels[4..8].try_into().unwrap()), 30);
}
