//! Round orchestration: augmentation, selection, local training,
//! aggregation and evaluation.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_device, Generator};
use crate::config::{Aggregation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::learner::{train_local, HyperParams, ModelParams};
use crate::rng::{self, purpose};
use crate::sampling::{class_proportions, select_devices, SelectionStrategy};
use crate::taskgen::{
    dirichlet_partition, draw_epoch_budget, generate_task, DeviceState, LabeledSample, Provenance, TaskSpec,
};

/// Share of the maximum accuracy that counts as converged.
pub const CONVERGENCE_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    /// Selected devices, in selection order.
    pub chosen: Vec<usize>,
    /// Local epochs run by each entry of `chosen`.
    pub local_epochs: Vec<usize>,
    /// Distance to the uniform class mix for every device, by id.
    pub distances: Vec<f64>,
    /// Size-weighted class mix over all devices.
    pub global_dist: Vec<f64>,
    pub synthetic_samples: usize,
    /// Mean over selected devices of their last-epoch training loss.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub max_accuracy: f64,
    pub convergence_epoch: usize,
    pub final_test_loss: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub final_model: ModelParams,
}

/// Weighted or uniform model average scaled by the global learning rate.
pub fn aggregate(models: &[ModelParams], sizes: &[usize], lr_global: f64, mode: Aggregation) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Integrity("aggregation over zero models".into()))?;
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Integrity("aggregated models differ in shape".into()));
    }
    if sizes.len() != models.len() {
        return Err(Error::Integrity("one dataset size per model required".into()));
    }
    let mut acc = vec![0.0; first.as_flat().len()];
    match mode {
        Aggregation::Uniform => {
            for m in models {
                for (a, x) in acc.iter_mut().zip(m.as_flat()) {
                    *a += x;
                }
            }
            let scale = lr_global / models.len() as f64;
            for a in &mut acc {
                *a *= scale;
            }
        }
        Aggregation::SizeWeighted => {
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::Integrity("size-weighted aggregation with zero data".into()));
            }
            for (m, &size) in models.iter().zip(sizes) {
                let w = size as f64 / total as f64;
                for (a, x) in acc.iter_mut().zip(m.as_flat()) {
                    *a += w * x;
                }
            }
            for a in &mut acc {
                *a *= lr_global;
            }
        }
    }
    ModelParams::from_flat(first.classes(), first.dim(), acc)
}

/// Test accuracy (argmax, lowest class wins ties) and mean cross-entropy of
/// the plain softmax.
pub fn evaluate(params: &ModelParams, test: &[LabeledSample]) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Domain("evaluation on an empty test set".into()));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in test {
        let z = params.logits(&s.features)?;
        let mut best = 0;
        for y in 1..z.len() {
            if z[y] > z[best] {
                best = y;
            }
        }
        if best == s.label {
            correct += 1;
        }
        let peak = z[best];
        let lse = peak + z.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
        loss += lse - z[s.label];
    }
    let n = test.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// First epoch whose accuracy reaches [`CONVERGENCE_FRACTION`] of the
/// maximum over the run.
pub fn convergence_epoch(accuracies: &[f64]) -> usize {
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    accuracies
        .iter()
        .position(|&a| a >= CONVERGENCE_FRACTION * max)
        .unwrap_or(0)
}

pub fn summarize(cfg: &ExperimentConfig, records: &[RoundRecord]) -> RunSummary {
    let accs: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let last = records.last();
    RunSummary {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        rounds: records.len(),
        final_accuracy: last.map_or(0.0, |r| r.test_accuracy),
        max_accuracy: accs.iter().copied().fold(0.0, f64::max),
        convergence_epoch: convergence_epoch(&accs),
        final_test_loss: last.map_or(f64::NAN, |r| r.test_loss),
    }
}

/// A federation in progress. Rounds run one at a time through [`step`].
///
/// [`step`]: Simulation::step
pub struct Simulation {
    cfg: ExperimentConfig,
    config_hash: String,
    task: TaskSpec,
    test: Vec<LabeledSample>,
    devices: Vec<DeviceState>,
    generator: Box<dyn Generator>,
    hp: HyperParams,
    global: ModelParams,
    round: usize,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let task = cfg.task_spec()?;
        let (train, test) = generate_task(&task)?;
        let devices = dirichlet_partition(&train, task.classes, cfg.n, cfg.alpha_dir, cfg.seed)?;
        let generator = cfg.build_generator(&task)?;
        if cfg.lr_global != 1.0 {
            log::warn!("lr_global = {} rescales the global model every round", cfg.lr_global);
        }
        Ok(Self {
            config_hash: cfg.config_hash(),
            hp: cfg.hyper_params(),
            global: ModelParams::zeros(task.classes, task.dim),
            cfg: cfg.clone(),
            task,
            test,
            devices,
            generator,
            round: 0,
        })
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn test_set(&self) -> &[LabeledSample] {
        &self.test
    }

    pub fn round(&self) -> usize {
        self.round
    }

    fn augment_all(&mut self, round: usize) -> Result<()> {
        let classes = self.task.classes;
        let generator = self.generator.as_ref();
        let fill = self.cfg.fill;
        let seed = self.cfg.seed;
        let augmented: Result<Vec<DeviceState>> = self
            .devices
            .par_iter()
            .map(|d| {
                let mut rng = rng::stream(seed, purpose::AUGMENT, d.id as u64, round as u64);
                augment_device(d, classes, generator, fill, &mut rng).map_err(|e| e.in_round(round, Some(d.id)))
            })
            .collect();
        self.devices = augmented?;
        Ok(())
    }

    /// Runs one global epoch and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let started = Instant::now();
        let round = self.round;
        let cfg = &self.cfg;
        let classes = self.task.classes;

        if cfg.plugin && (round == 0 || cfg.augment_every_round) {
            self.augment_all(round)?;
        }
        let cfg = &self.cfg;

        let proportions = self
            .devices
            .iter()
            .map(|d| class_proportions(d.training_data(), classes).map_err(|e| e.in_round(round, Some(d.id))))
            .collect::<Result<Vec<_>>>()?;
        let strategy = if cfg.plugin {
            cfg.select
        } else {
            SelectionStrategy::Random
        };
        let mut select_rng = rng::stream(cfg.seed, purpose::SELECT, 0, round as u64);
        let selection = select_devices(&proportions, cfg.k, strategy, cfg.distance, &mut select_rng)
            .map_err(|e| e.in_round(round, None))?;

        let local_epochs: Vec<usize> = selection
            .chosen
            .iter()
            .map(|&id| draw_epoch_budget(&self.devices[id], round, cfg.l))
            .collect();

        // Train in ascending id order so aggregation order is fixed.
        let mut jobs: Vec<(usize, usize)> = selection
            .chosen
            .iter()
            .copied()
            .zip(local_epochs.iter().copied())
            .collect();
        jobs.sort_unstable();
        let global = &self.global;
        let hp = &self.hp;
        let devices = &self.devices;
        let outcomes = jobs
            .par_iter()
            .map(|&(id, epochs)| {
                let data = devices[id].training_data();
                let objective = cfg.objective_for(data);
                let mut rng = rng::stream(cfg.seed, purpose::TRAIN, id as u64, round as u64);
                train_local(global, data, &objective, hp, epochs, &mut rng).map_err(|e| e.in_round(round, Some(id)))
            })
            .collect::<Result<Vec<_>>>()?;

        let sizes: Vec<usize> = jobs.iter().map(|&(id, _)| devices[id].training_data().len()).collect();
        let train_loss = outcomes.iter().map(|o| o.train_loss).sum::<f64>() / outcomes.len() as f64;
        let models: Vec<ModelParams> = outcomes.into_iter().map(|o| o.params).collect();
        let next = aggregate(&models, &sizes, cfg.lr_global, cfg.aggregation).map_err(|e| e.in_round(round, None))?;
        if !next.is_finite() {
            return Err(Error::Integrity("aggregated model is not finite".into()).in_round(round, None));
        }
        let (test_accuracy, test_loss) = evaluate(&next, &self.test).map_err(|e| e.in_round(round, None))?;
        self.global = next;

        let synthetic_samples = self
            .devices
            .iter()
            .map(|d| {
                d.training_data()
                    .iter()
                    .filter(|s| s.provenance == Provenance::Synthetic)
                    .count()
            })
            .sum();

        self.round += 1;
        Ok(RoundRecord {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            epoch: round,
            chosen: selection.chosen,
            local_epochs,
            distances: selection.distances,
            global_dist: selection.global_dist.p,
            synthetic_samples,
            train_loss,
            test_loss,
            test_accuracy,
            wall_time: started.elapsed(),
        })
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let mut records = Vec::with_capacity(self.cfg.g);
        while self.round < self.cfg.g {
            let record = self.step()?;
            log::debug!(
                "round {} acc {:.4} loss {:.4} ({:?})",
                record.epoch,
                record.test_accuracy,
                record.train_loss,
                record.wall_time
            );
            records.push(record);
        }
        let summary = summarize(&self.cfg, &records);
        Ok(RunOutput {
            records,
            summary,
            final_model: self.global,
        })
    }
}

/// Runs every round of `cfg` on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    Simulation::new(cfg)?.run()
}

/// Runs `cfg` on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

/// One JSON object per round.
pub fn write_round_log<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summaries: &[RunSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
