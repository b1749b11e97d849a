//! Synthetic task generation, Dirichlet label-skew partitioning and
//! per-round compute budgets.

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn original(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            provenance: Provenance::Original,
        }
    }

    pub fn synthetic(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            provenance: Provenance::Synthetic,
        }
    }
}

/// Class-conditional Gaussian task: class `y` draws features from
/// `N(class_means[y], class_scale² I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub classes: usize,
    pub dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub class_scale: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Label marginal for the training split; `None` means uniform.
    pub train_marginal: Option<Vec<f64>>,
    pub seed: u64,
}

impl TaskSpec {
    /// Places class means at `class_sep` along a signed coordinate axis
    /// (`+e_y` for the first `dim` classes, `-e_{y-dim}` for the next `dim`,
    /// and so on with growing radius) and perturbs each mean with
    /// `N(0, mean_jitter²)` noise drawn from the seed.
    #[allow(clippy::too_many_arguments)]
    pub fn with_layout(
        classes: usize,
        dim: usize,
        class_sep: f64,
        mean_jitter: f64,
        class_scale: f64,
        train_size: usize,
        test_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if !(class_sep.is_finite() && class_sep > 0.0) {
            return Err(Error::config("class_sep", "must be positive and finite"));
        }
        if !(mean_jitter.is_finite() && mean_jitter >= 0.0) {
            return Err(Error::config("mean_jitter", "must be non-negative and finite"));
        }
        let mut rng = rng::stream(seed, purpose::TASK_MEANS, 0, 0);
        let class_means = (0..classes)
            .map(|y| {
                let axis = y % dim;
                let lap = y / dim;
                let sign = if lap.is_multiple_of(2) { 1.0 } else { -1.0 };
                let radius = class_sep * (1 + lap / 2) as f64;
                (0..dim)
                    .map(|j| {
                        let base = if j == axis { sign * radius } else { 0.0 };
                        let z: f64 = StandardNormal.sample(&mut rng);
                        base + mean_jitter * z
                    })
                    .collect()
            })
            .collect();
        let spec = Self {
            classes,
            dim,
            class_means,
            class_scale,
            train_size,
            test_size,
            train_marginal: None,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.dim < 1 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        // Zero scale is accepted: it collapses every class onto its mean.
        if !(self.class_scale.is_finite() && self.class_scale >= 0.0) {
            return Err(Error::config("class_scale", "must be non-negative and finite"));
        }
        if self.class_means.len() != self.classes {
            return Err(Error::config(
                "class_means",
                format!("expected {} means, got {}", self.classes, self.class_means.len()),
            ));
        }
        if let Some(bad) = self.class_means.iter().position(|m| m.len() != self.dim) {
            return Err(Error::config(
                "class_means",
                format!("mean {bad} does not have dimension {}", self.dim),
            ));
        }
        for a in 0..self.classes {
            for b in a + 1..self.classes {
                if self.class_means[a] == self.class_means[b] {
                    return Err(Error::config(
                        "class_means",
                        format!("classes {a} and {b} share a mean"),
                    ));
                }
            }
        }
        if let Some(marginal) = &self.train_marginal {
            if marginal.len() != self.classes
                || marginal.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || marginal.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::config(
                    "train_marginal",
                    "needs one non-negative weight per class with a positive sum",
                ));
            }
        }
        Ok(())
    }

    /// Smallest Euclidean distance between two class means.
    pub fn min_mean_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.classes {
            for b in a + 1..self.classes {
                let d = euclidean(&self.class_means[a], &self.class_means[b]);
                best = best.min(d);
            }
        }
        best
    }

    /// Draws one feature vector of class `label`.
    pub fn sample_features<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Vec<f64> {
        self.class_means[label]
            .iter()
            .map(|&mu| {
                let z: f64 = StandardNormal.sample(rng);
                mu + self.class_scale * z
            })
            .collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draws the train and test splits. Test labels are uniform over classes;
/// train labels follow `train_marginal`.
pub fn generate_task(spec: &TaskSpec) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    spec.validate()?;

    let mut train_rng = rng::stream(spec.seed, purpose::TASK_TRAIN, 0, 0);
    let train = match &spec.train_marginal {
        Some(weights) => {
            let dist = WeightedIndex::new(weights).map_err(|e| Error::config("train_marginal", e.to_string()))?;
            (0..spec.train_size)
                .map(|_| {
                    let y = dist.sample(&mut train_rng);
                    LabeledSample::original(spec.sample_features(y, &mut train_rng), y)
                })
                .collect()
        }
        None => draw_uniform(spec, spec.train_size, &mut train_rng),
    };

    let mut test_rng = rng::stream(spec.seed, purpose::TASK_TEST, 0, 0);
    let test = draw_uniform(spec, spec.test_size, &mut test_rng);
    Ok((train, test))
}

fn draw_uniform(spec: &TaskSpec, count: usize, rng: &mut StreamRng) -> Vec<LabeledSample> {
    (0..count)
        .map(|_| {
            let y = rng.random_range(0..spec.classes);
            LabeledSample::original(spec.sample_features(y, rng), y)
        })
        .collect()
}

/// One edge device.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub id: usize,
    pub local_data: Vec<LabeledSample>,
    /// Local data plus synthetic fill; empty until augmentation has run.
    pub augmented_data: Vec<LabeledSample>,
    pub rng_seed: u64,
}

impl DeviceState {
    pub fn new(id: usize, local_data: Vec<LabeledSample>, rng_seed: u64) -> Self {
        Self {
            id,
            local_data,
            augmented_data: Vec::new(),
            rng_seed,
        }
    }

    /// The dataset the device trains on: augmented if available.
    pub fn training_data(&self) -> &[LabeledSample] {
        if self.augmented_data.is_empty() {
            &self.local_data
        } else {
            &self.augmented_data
        }
    }
}

/// Draws a point from the symmetric Dirichlet(alpha) simplex over `n`
/// coordinates.
///
/// Gamma variates are combined in log space: for `alpha < 1` a
/// `Gamma(alpha)` draw is `Gamma(alpha + 1) * U^(1/alpha)`, and the power
/// term underflows to zero for tiny `alpha` unless kept as a logarithm.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let (shape, boost) = if alpha < 1.0 {
        (alpha + 1.0, true)
    } else {
        (alpha, false)
    };
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mut log_g = g.ln();
            if boost {
                // U in (0, 1]
                let u: f64 = 1.0 - rng.random::<f64>();
                log_g += u.ln() / alpha;
            }
            log_g
        })
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Splits `train` across `devices` devices: each class is shuffled and cut
/// according to proportions drawn from a symmetric Dirichlet over devices.
/// Devices left empty then receive one random sample from the currently
/// largest device.
pub fn dirichlet_partition(
    train: &[LabeledSample],
    classes: usize,
    devices: usize,
    alpha_dir: f64,
    seed: u64,
) -> Result<Vec<DeviceState>> {
    if devices == 0 {
        return Err(Error::config("n", "need at least one device"));
    }
    if !(alpha_dir.is_finite() && alpha_dir > 0.0) {
        return Err(Error::config("alpha_dir", "must be positive and finite"));
    }
    if devices > train.len() {
        return Err(Error::config(
            "n",
            format!("{devices} devices exceed {} training samples", train.len()),
        ));
    }
    if let Some(s) = train.iter().find(|s| s.label >= classes) {
        return Err(Error::Domain(format!(
            "label {} out of range for {classes} classes",
            s.label
        )));
    }

    let mut rng = rng::stream(seed, purpose::PARTITION, 0, 0);
    let mut shards: Vec<Vec<LabeledSample>> = vec![Vec::new(); devices];

    for class in 0..classes {
        let mut members: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == class).collect();
        members.shuffle(&mut rng);
        let proportions = sample_dirichlet(alpha_dir, devices, &mut rng);
        let total = members.len();
        let mut cumulative = 0.0;
        let mut start = 0;
        for (device, p) in proportions.iter().enumerate() {
            cumulative += p;
            let end = if device + 1 == devices {
                total
            } else {
                ((cumulative * total as f64).floor() as usize).clamp(start, total)
            };
            shards[device].extend(members[start..end].iter().map(|&i| train[i].clone()));
            start = end;
        }
    }

    for empty in 0..devices {
        if !shards[empty].is_empty() {
            continue;
        }
        let donor = (0..devices)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("at least one device");
        let pick = rng.random_range(0..shards[donor].len());
        let moved = shards[donor].remove(pick);
        shards[empty].push(moved);
    }

    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(id, data)| DeviceState::new(id, data, rng::derive_seed(seed, purpose::DEVICE, id as u64, 0)))
        .collect())
}

/// Number of local epochs the device can afford in `round`, uniform on
/// `1..=max_epochs`.
pub fn draw_epoch_budget(device: &DeviceState, round: usize, max_epochs: usize) -> usize {
    if max_epochs <= 1 {
        return 1;
    }
    let mut rng = rng::stream(device.rng_seed, purpose::BUDGET, device.id as u64, round as u64);
    rng.random_range(1..=max_epochs)
}
