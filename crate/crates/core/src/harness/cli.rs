//! Command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use super::config::{EnsembleMode, ExperimentConfig};
use super::experiment::{run_pipeline, PipelineOptions, RunReport};
use super::metrics::mean_std;
use super::report::{publish_report, read_report, PROBE_FILE};
use crate::data::{gen_glyph_dataset, write_idx, GlyphSpec};
use crate::numeric::RngStream;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SUBSPACE_CL_OUT";

#[derive(Debug, Parser)]
#[command(name = "subspace-cl", version, about = "Class-incremental learning with per-task feature subspaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its report.
    Run(RunArgs),
    /// Run a grid over seeds, modes and rotation-loss weights.
    Sweep(SweepArgs),
    /// Run an experiment and the offline per-subspace probe.
    Probe(RunArgs),
    /// Print a stored report.
    Inspect {
        /// Report directory (or sweep directory).
        dir: PathBuf,
    },
    /// Write a procedural glyph image dataset as IDX files.
    GenIdx(GenIdxArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; defaults to a name under the output root.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Output root used when --out is absent.
    #[arg(long, env = OUT_ENV, value_name = "DIR", hide_env_values = true)]
    pub out_root: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<EnsembleMode>,
    /// Also save the trained state as JSON.
    #[arg(long)]
    pub save_state: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Vec<EnsembleMode>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct GenIdxArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub classes: usize,
    #[arg(long, default_value_t = 12)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub strokes: usize,
    #[arg(long, default_value_t = 60)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` and runs the command. Usage errors are returned as
/// [`clap::Error`] inside the `anyhow` error.
pub fn run_cli<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Run(a) => run_cmd(a, false),
        Command::Probe(a) => run_cmd(a, true),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Inspect { dir } => inspect_cmd(&dir),
        Command::GenIdx(a) => gen_idx_cmd(a),
    }
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    if !common.config.is_file() {
        bail!(
            "config file {} not found\n\nUsage: subspace-cl <run|sweep|probe> --config <PATH>",
            common.config.display()
        );
    }
    Ok(ExperimentConfig::load(&common.config)?)
}

fn output_root(common: &Common, config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .or_else(|| common.out_root.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_cmd(args: RunArgs, probe: bool) -> anyhow::Result<()> {
    let mut config = load(&args.common)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    config.validate()?;
    let target = args.common.out.clone().unwrap_or_else(|| {
        output_root(&args.common, &config).join(format!("{}-seed{}", config.mode, config.seed))
    });
    if target.exists() && !args.common.force {
        bail!("{} already exists (pass --force to replace it)", target.display());
    }
    let mut outcome = run_pipeline(&config, &PipelineOptions { modes: vec![], probe })?;
    let report = outcome.reports.remove(0);
    let state = args.save_state.then_some(&outcome.state);
    publish_report(&report, &target, state, args.common.force)?;
    print_summary(&report);
    if let Some(p) = &report.probe {
        println!("probe (rows: subspace, columns: task, last: mean)");
        for (k, (row, mean)) in p.accuracy.iter().zip(&p.means).enumerate() {
            let cells: Vec<String> = row.iter().map(|a| format!("{a:.3}")).collect();
            println!("  {:>3}: {}  | {mean:.3}", k + 1, cells.join(" "));
        }
        println!("wrote {}", target.join(PROBE_FILE).display());
    }
    println!("report: {}", target.display());
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!(
        "mode {} seed {}: LAA {:.4}  IAA {:.4}  ({} tasks, {:.1}s)",
        report.mode,
        report.seed,
        report.metrics.laa,
        report.metrics.iaa,
        report.accuracy.len(),
        report.wall_clock_secs
    );
}

fn fmt_alpha(a: f64) -> String {
    format!("{a}")
}

fn sweep_cmd(args: SweepArgs) -> anyhow::Result<()> {
    let config = load(&args.common)?;
    let seeds = if args.seeds.is_empty() { config.sweep.seeds.clone() } else { args.seeds.clone() };
    let mut modes = if args.modes.is_empty() { config.sweep.modes.clone() } else { args.modes.clone() };
    if modes.is_empty() {
        modes.push(config.mode);
    }
    let mut alphas = if args.alphas.is_empty() { config.sweep.alphas.clone() } else { args.alphas.clone() };
    if alphas.is_empty() {
        alphas.push(config.peft.alpha);
    }
    let target = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| output_root(&args.common, &config).join("sweep"));
    if target.exists() && !args.common.force {
        bail!("{} already exists (pass --force to replace it)", target.display());
    }

    let cells: Vec<(f64, u64)> = alphas.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let results: Vec<Vec<RunReport>> = cells
        .par_iter()
        .map(|&(alpha, seed)| -> anyhow::Result<Vec<RunReport>> {
            let mut c = config.clone();
            c.seed = seed;
            c.peft.alpha = alpha;
            c.validate()?;
            let out = run_pipeline(
                &c,
                &PipelineOptions {
                    modes: modes.clone(),
                    probe: false,
                },
            )
            .with_context(|| format!("sweep cell alpha={alpha} seed={seed}"))?;
            Ok(out.reports)
        })
        .collect::<anyhow::Result<_>>()?;

    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    let scratch = tempfile::Builder::new().prefix(".partial-").tempdir_in(parent)?;
    let mut groups: BTreeMap<(EnsembleMode, String), Vec<&RunReport>> = BTreeMap::new();
    for ((alpha, seed), reports) in cells.iter().zip(&results) {
        for r in reports {
            let name = format!("{}_alpha{}_seed{}", r.mode, fmt_alpha(*alpha), seed);
            publish_report(r, &scratch.path().join(name), None, false)?;
            groups.entry((r.mode, fmt_alpha(*alpha))).or_default().push(r);
        }
    }
    let summary_path = scratch.path().join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["mode", "alpha", "runs", "laa_mean", "laa_std", "iaa_mean", "iaa_std"])?;
    println!("{:<11} {:>6}  {:>17}  {:>17}", "mode", "alpha", "LAA", "IAA");
    for ((mode, alpha), reports) in &groups {
        let laa: Vec<f64> = reports.iter().map(|r| r.metrics.laa).collect();
        let iaa: Vec<f64> = reports.iter().map(|r| r.metrics.iaa).collect();
        let (lm, ls) = mean_std(&laa);
        let (im, is) = mean_std(&iaa);
        w.write_record([
            mode.name().to_string(),
            alpha.clone(),
            reports.len().to_string(),
            lm.to_string(),
            ls.to_string(),
            im.to_string(),
            is.to_string(),
        ])?;
        println!(
            "{:<11} {:>6}  {:>7.2} ± {:<6.2}  {:>7.2} ± {:<6.2}",
            mode.name(),
            alpha,
            100.0 * lm,
            100.0 * ls,
            100.0 * im,
            100.0 * is
        );
    }
    w.flush()?;
    drop(w);
    if target.exists() {
        fs::remove_dir_all(&target)?;
    }
    fs::rename(scratch.keep(), &target).with_context(|| target.display().to_string())?;
    println!("sweep: {}", target.display());
    Ok(())
}

fn inspect_cmd(dir: &Path) -> anyhow::Result<()> {
    let summary = dir.join("summary.csv");
    if summary.is_file() {
        print!("{}", fs::read_to_string(&summary)?);
        return Ok(());
    }
    let r = read_report(dir)?;
    println!("mode {}  seed {}  wall clock {:.1}s", r.mode, r.seed, r.wall_clock_secs);
    println!("step  accuracy  macro");
    for (t, (a, m)) in r.step_accuracy.iter().zip(&r.step_macro).enumerate() {
        println!("{:>4}  {a:>8.4}  {m:>6.4}", t + 1);
    }
    println!("LAA {:.4}  IAA {:.4}", r.metrics.laa, r.metrics.iaa);
    println!("macro LAA {:.4}  macro IAA {:.4}", r.macro_metrics.laa, r.macro_metrics.iaa);
    Ok(())
}

fn gen_idx_cmd(a: GenIdxArgs) -> anyhow::Result<()> {
    let spec = GlyphSpec {
        classes: a.classes,
        side: a.side,
        strokes: a.strokes,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        noise: a.noise,
    };
    let (train, test) = gen_glyph_dataset(&spec, &RngStream::new(a.seed, "glyphs"))?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    write_idx(&train, &a.out.join("train-images-idx3-ubyte"), &a.out.join("train-labels-idx1-ubyte"))?;
    write_idx(&test, &a.out.join("test-images-idx3-ubyte"), &a.out.join("test-labels-idx1-ubyte"))?;
    println!("wrote {} training and {} test images to {}", train.len(), test.len(), a.out.display());
    Ok(())
}
