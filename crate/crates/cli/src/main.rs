use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use fedbal_core::config::{parse_override, Algorithm, GeneratorKind};
use fedbal_core::engine::{run_experiment_with_workers, write_round_log, write_summary_csv};
use fedbal_core::sweep::{run_sweep_with_workers, SweepSpec};
use fedbal_core::{parse_config, ExperimentConfig};

/// Federated learning simulator with device-side augmentation and balanced
/// device sampling.
///
/// Settings are layered: built-in defaults, then `--config`, then each
/// `--set`, then the dedicated flags.
#[derive(Parser, Debug)]
#[command(name = "fedbal", version)]
struct Cli {
    /// TOML experiment config (flat `key = value` pairs).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory. Defaults to `out` for a single run and to the
    /// sweep file's `out` for a sweep.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,

    /// Toggle augmentation plus balanced sampling.
    #[arg(long, value_enum)]
    plugin: Option<Switch>,

    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,

    /// Run a grid sweep described by this file instead of a single run.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with_all = ["config", "seed", "algorithm", "plugin", "generator", "set"]
    )]
    sweep: Option<PathBuf>,

    /// Override any config key, e.g. `--set alpha_dir=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads for local training (results do not depend on this).
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    Fedavg,
    Fedprox,
    Fedrs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GeneratorArg {
    Oracle,
    Jitter,
    Shifted,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    let mut pairs = Vec::with_capacity(cli.set.len());
    for item in &cli.set {
        pairs.push(parse_override(item)?);
    }
    cfg = cfg.with_overrides(pairs)?;

    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(a) = cli.algorithm {
        cfg.algorithm = match a {
            AlgorithmArg::Fedavg => Algorithm::Fedavg,
            AlgorithmArg::Fedprox => Algorithm::Fedprox,
            AlgorithmArg::Fedrs => Algorithm::Fedrs,
        };
    }
    if let Some(p) = cli.plugin {
        cfg.plugin = matches!(p, Switch::On);
    }
    if let Some(g) = cli.generator {
        cfg.generator = match g {
            GeneratorArg::Oracle => GeneratorKind::Oracle,
            GeneratorArg::Jitter => GeneratorKind::Jitter,
            GeneratorArg::Shifted => GeneratorKind::Shifted,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_run(cli: &Cli) -> Result<ExitCode> {
    let cfg = build_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    log::info!(
        "config {} seed {} on {} workers",
        cfg.config_hash(),
        cfg.seed,
        cli.workers
    );
    let run = run_experiment_with_workers(&cfg, cli.workers)?;

    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let rounds = File::create(out.join("rounds.jsonl"))?;
    write_round_log(&run.records, BufWriter::new(rounds))?;
    let summary = File::create(out.join("summary.csv"))?;
    write_summary_csv(std::slice::from_ref(&run.summary), BufWriter::new(summary))?;

    let s = &run.summary;
    println!(
        "config {} seed {}: final accuracy {:.4}, max {:.4}, converged at round {}",
        s.config_hash, s.seed, s.final_accuracy, s.max_accuracy, s.convergence_epoch
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep(cli: &Cli, path: &PathBuf) -> Result<ExitCode> {
    let mut spec = SweepSpec::from_file(path)?;
    if let Some(out) = &cli.out {
        spec.out = out.clone();
    }
    let report = run_sweep_with_workers(&spec, cli.workers)?;
    for p in &report.points {
        println!(
            "{:>3} {}: mean final accuracy {:.4} (sd {:.4}), {} runs, {} failed",
            p.point, p.label, p.mean_final_accuracy, p.std_final_accuracy, p.runs, p.failed
        );
    }
    println!("wrote {}", spec.out.display());
    let failed = report.failures();
    if failed > 0 {
        eprintln!("error: {failed} of {} runs failed; see runs.csv", report.runs.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.sweep {
        Some(path) => sweep(&cli, path),
        None => single_run(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
