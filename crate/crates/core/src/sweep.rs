//! Grid sweeps: every combination of override values, repeated over seeds.
//!
//! A sweep file is TOML with top-level `base`, `seeds` and `out` keys and a
//! `[grid]` table mapping config keys to value lists:
//!
//! ```toml
//! base = "default.toml"
//! seeds = 3
//! out = "results/plugin"
//!
//! [grid]
//! plugin = [true, false]
//! alpha_dir = [1.0, 0.1, 0.01]
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, ExperimentConfig};
use crate::engine::{run_experiment, write_round_log, RunSummary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// `None` runs the grid on top of the built-in defaults.
    pub base: Option<PathBuf>,
    /// Keys in sorted order, each with at least one value.
    pub grid: BTreeMap<String, Vec<toml::Value>>,
    pub seeds: usize,
    pub out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: Option<PathBuf>,
    #[serde(default = "one")]
    seeds: usize,
    out: Option<PathBuf>,
    #[serde(default)]
    grid: BTreeMap<String, Vec<toml::Value>>,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    /// Reads a sweep file. Relative `base` and `out` paths resolve against
    /// the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let file: SweepFile = toml::from_str(&text).map_err(|e| Error::Syntax {
            path: path.to_path_buf(),
            message: e.to_string().trim().to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let spec = Self {
            base: file.base.map(|b| dir.join(b)),
            grid: file.grid,
            seeds: file.seeds,
            out: dir.join(file.out.unwrap_or_else(|| PathBuf::from("sweep-out"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        for (key, values) in &self.grid {
            if key == "seed" {
                return Err(Error::config("seed", "seeds are set by the sweep's `seeds` count"));
            }
            if !ExperimentConfig::is_known_key(key) {
                return Err(Error::UnknownKey(key.clone()));
            }
            if values.is_empty() {
                return Err(Error::config(key.clone(), "grid values must not be empty"));
            }
        }
        Ok(())
    }

    /// Cartesian product of the grid, last key varying fastest.
    pub fn points(&self) -> Vec<Vec<(String, toml::Value)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut next = p.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        points
    }
}

fn point_label(point: &[(String, toml::Value)]) -> String {
    if point.is_empty() {
        return "base".to_string();
    }
    point
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub point: usize,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub status: String,
    pub final_accuracy: Option<f64>,
    pub max_accuracy: Option<f64>,
    pub convergence_epoch: Option<usize>,
    pub log_file: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointRow {
    pub point: usize,
    pub label: String,
    pub config_hash: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    pub mean_max_accuracy: f64,
    pub mean_convergence_epoch: f64,
    pub std_convergence_epoch: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub runs: Vec<RunRow>,
    pub points: Vec<PointRow>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status != "ok").count()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Job {
    point: usize,
    label: String,
    seed: u64,
    config: Result<ExperimentConfig>,
}

fn execute(job: &Job, logs: &Path) -> RunRow {
    let file_name = format!("p{:03}_s{}.jsonl", job.point, job.seed);
    let mut row = RunRow {
        point: job.point,
        label: job.label.clone(),
        seed: job.seed,
        config_hash: String::new(),
        status: "ok".into(),
        final_accuracy: None,
        max_accuracy: None,
        convergence_epoch: None,
        log_file: format!("runs/{file_name}"),
        error: String::new(),
    };
    let outcome = job.config.as_ref().map_err(|e| e.to_string()).and_then(|cfg| {
        row.config_hash = cfg.config_hash();
        let out = run_experiment(cfg).map_err(|e| e.to_string())?;
        let file = File::create(logs.join(&file_name)).map_err(|e| e.to_string())?;
        write_round_log(&out.records, BufWriter::new(file)).map_err(|e| e.to_string())?;
        Ok(out.summary)
    });
    match outcome {
        Ok(RunSummary {
            final_accuracy,
            max_accuracy,
            convergence_epoch,
            ..
        }) => {
            row.final_accuracy = Some(final_accuracy);
            row.max_accuracy = Some(max_accuracy);
            row.convergence_epoch = Some(convergence_epoch);
        }
        Err(message) => {
            log::error!("{} seed {}: {message}", job.label, job.seed);
            row.status = "failed".into();
            row.error = message;
        }
    }
    row
}

/// Runs every grid point for every seed, writing `runs/*.jsonl`,
/// `runs.csv` (one row per run) and `summary.csv` (one row per point)
/// under `spec.out`. Failed runs are recorded and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let base = match &spec.base {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    let logs = spec.out.join("runs");
    fs::create_dir_all(&logs)?;

    let points = spec.points();
    let mut jobs = Vec::with_capacity(points.len() * spec.seeds);
    for (index, point) in points.iter().enumerate() {
        for rep in 0..spec.seeds {
            let seed = base.seed.wrapping_add(rep as u64);
            let mut values = point.clone();
            values.push(("seed".to_string(), toml::Value::Integer(seed as i64)));
            jobs.push(Job {
                point: index,
                label: point_label(point),
                seed,
                config: base.with_values(values),
            });
        }
    }

    let runs: Vec<RunRow> = jobs.par_iter().map(|job| execute(job, &logs)).collect();

    let mut rows = Vec::with_capacity(points.len());
    for (index, point) in points.iter().enumerate() {
        let mine: Vec<&RunRow> = runs.iter().filter(|r| r.point == index).collect();
        let ok: Vec<&&RunRow> = mine.iter().filter(|r| r.status == "ok").collect();
        let finals: Vec<f64> = ok.iter().filter_map(|r| r.final_accuracy).collect();
        let maxes: Vec<f64> = ok.iter().filter_map(|r| r.max_accuracy).collect();
        let epochs: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.convergence_epoch.map(|e| e as f64))
            .collect();
        let (mean_final, std_final) = mean_std(&finals);
        let (mean_epoch, std_epoch) = mean_std(&epochs);
        let config_hash = base
            .with_values(point.clone())
            .map(|c| c.config_hash())
            .unwrap_or_default();
        rows.push(PointRow {
            point: index,
            label: point_label(point),
            config_hash,
            runs: mine.len(),
            failed: mine.len() - ok.len(),
            mean_final_accuracy: mean_final,
            std_final_accuracy: std_final,
            mean_max_accuracy: mean_std(&maxes).0,
            mean_convergence_epoch: mean_epoch,
            std_convergence_epoch: std_epoch,
        });
    }

    write_csv(&spec.out.join("runs.csv"), &runs)?;
    write_csv(&spec.out.join("summary.csv"), &rows)?;
    Ok(SweepReport { runs, points: rows })
}

/// Runs the sweep on a dedicated pool of `workers` threads.
pub fn run_sweep_with_workers(spec: &SweepSpec, workers: usize) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| run_sweep(spec))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
