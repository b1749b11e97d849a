//! Device-side class balancing with synthetic samples.
//!
//! For every class that is present but smaller than the device's largest
//! class, a generator produces extra samples. The amount is a uniform random
//! integer in `1..=max_count - count` (or exactly that bound with
//! [`FillMode::Max`]). Classes the device has never seen are left alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::taskgen::{DeviceState, LabeledSample, Provenance, TaskSpec};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl ClassHistogram {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn from_samples(data: &[LabeledSample], classes: usize) -> Self {
        let mut counts = vec![0; classes];
        for s in data {
            counts[s.label] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn max_count(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn present(&self, class: usize) -> bool {
        self.counts[class] > 0
    }
}

/// `(max_count - counts[class]) / total`, or `None` for a class the device
/// does not hold.
pub fn deficiency_ratio(hist: &ClassHistogram, class: usize) -> Result<Option<f64>> {
    if hist.total == 0 {
        return Err(Error::Domain("deficiency ratio of an empty histogram".into()));
    }
    if class >= hist.counts.len() {
        return Err(Error::Domain(format!("class {class} outside histogram")));
    }
    if !hist.present(class) {
        return Ok(None);
    }
    Ok(Some((hist.max_count() - hist.counts[class]) as f64 / hist.total as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Uniform random count in `1..=deficit`.
    #[default]
    Random,
    /// Always generate the full deficit.
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPlan {
    /// `None` for absent classes.
    pub deficiency: Vec<Option<f64>>,
    pub gen_counts: Vec<usize>,
}

impl AugmentationPlan {
    pub fn is_noop(&self) -> bool {
        self.gen_counts.iter().all(|&m| m == 0)
    }

    pub fn total(&self) -> usize {
        self.gen_counts.iter().sum()
    }
}

/// Decides how many synthetic samples each class receives.
///
/// The upper bound `floor(deficiency * total)` equals `max_count - count`
/// exactly and is computed in integers, so float rounding cannot shave a
/// sample off the range. An empty range yields zero.
pub fn plan_augmentation(hist: &ClassHistogram, fill: FillMode, rng: &mut StreamRng) -> Result<AugmentationPlan> {
    if hist.total == 0 {
        return Err(Error::Domain("cannot plan augmentation for an empty device".into()));
    }
    let max = hist.max_count();
    let mut deficiency = Vec::with_capacity(hist.counts.len());
    let mut gen_counts = Vec::with_capacity(hist.counts.len());
    for class in 0..hist.counts.len() {
        let ratio = deficiency_ratio(hist, class)?;
        deficiency.push(ratio);
        let upper = match ratio {
            Some(r) if r > 0.0 => max - hist.counts[class],
            _ => 0,
        };
        let m = match (upper, fill) {
            (0, _) => 0,
            (_, FillMode::Max) => upper,
            (_, FillMode::Random) => rng.random_range(1..=upper),
        };
        gen_counts.push(m);
    }
    Ok(AugmentationPlan { deficiency, gen_counts })
}

/// A source of synthetic samples for one class.
pub trait Generator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns exactly `count` synthetic samples of class `label`. `local`
    /// holds the device's own class-`label` samples and is never empty.
    fn generate(&self, label: usize, local: &[&LabeledSample], count: usize, rng: &mut StreamRng)
        -> Vec<LabeledSample>;
}

/// Samples from the true class-conditional distribution.
#[derive(Clone, Debug)]
pub struct OracleGenerator {
    task: TaskSpec,
}

impl OracleGenerator {
    pub fn new(task: TaskSpec) -> Self {
        Self { task }
    }
}

impl Generator for OracleGenerator {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn generate(
        &self,
        label: usize,
        _local: &[&LabeledSample],
        count: usize,
        rng: &mut StreamRng,
    ) -> Vec<LabeledSample> {
        (0..count)
            .map(|_| LabeledSample::synthetic(self.task.sample_features(label, rng), label))
            .collect()
    }
}

/// Resamples local points with replacement and adds isotropic Gaussian noise.
#[derive(Clone, Debug)]
pub struct JitterGenerator {
    bandwidth: f64,
}

impl JitterGenerator {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth >= 0.0) {
            return Err(Error::config("jitter_bandwidth", "must be non-negative and finite"));
        }
        Ok(Self { bandwidth })
    }
}

impl Generator for JitterGenerator {
    fn name(&self) -> &'static str {
        "jitter"
    }

    fn generate(
        &self,
        label: usize,
        local: &[&LabeledSample],
        count: usize,
        rng: &mut StreamRng,
    ) -> Vec<LabeledSample> {
        assert!(!local.is_empty(), "jitter needs at least one class-{label} sample");
        (0..count)
            .map(|_| {
                let base = local[rng.random_range(0..local.len())];
                let features = base
                    .features
                    .iter()
                    .map(|&x| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        x + self.bandwidth * z
                    })
                    .collect();
                LabeledSample::synthetic(features, label)
            })
            .collect()
    }
}

/// Oracle samples displaced by a fixed bias vector: a generator whose output
/// distribution does not match the real data.
#[derive(Clone, Debug)]
pub struct ShiftedGenerator {
    oracle: OracleGenerator,
    bias: Vec<f64>,
}

impl ShiftedGenerator {
    pub fn new(task: TaskSpec, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != task.dim {
            return Err(Error::config(
                "shift_bias",
                format!("expected {} entries, got {}", task.dim, bias.len()),
            ));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("shift_bias", "entries must be finite"));
        }
        Ok(Self {
            oracle: OracleGenerator::new(task),
            bias,
        })
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl Generator for ShiftedGenerator {
    fn name(&self) -> &'static str {
        "shifted"
    }

    fn generate(
        &self,
        label: usize,
        local: &[&LabeledSample],
        count: usize,
        rng: &mut StreamRng,
    ) -> Vec<LabeledSample> {
        let mut samples = self.oracle.generate(label, local, count, rng);
        for s in &mut samples {
            for (x, b) in s.features.iter_mut().zip(&self.bias) {
                *x += b;
            }
        }
        samples
    }
}

/// Builds the augmented dataset of one device: its local samples, in order,
/// followed by synthetic samples for each planned class.
pub fn augment_device(
    device: &DeviceState,
    classes: usize,
    generator: &dyn Generator,
    fill: FillMode,
    rng: &mut StreamRng,
) -> Result<DeviceState> {
    if device.local_data.is_empty() {
        return Err(Error::Domain(format!("device {} has no local data", device.id)));
    }
    let dim = device.local_data[0].features.len();
    let hist = ClassHistogram::from_samples(&device.local_data, classes);
    let plan = plan_augmentation(&hist, fill, rng)?;

    let mut augmented = device.local_data.clone();
    augmented.reserve(plan.total());
    for (label, &count) in plan.gen_counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let local: Vec<&LabeledSample> = device.local_data.iter().filter(|s| s.label == label).collect();
        let synthetic = generator.generate(label, &local, count, rng);
        check_generated(generator.name(), label, count, dim, &synthetic)?;
        augmented.extend(synthetic);
    }

    Ok(DeviceState {
        augmented_data: augmented,
        ..device.clone()
    })
}

fn check_generated(name: &str, label: usize, count: usize, dim: usize, samples: &[LabeledSample]) -> Result<()> {
    if samples.len() != count {
        return Err(Error::Integrity(format!(
            "generator `{name}` returned {} samples for class {label}, expected {count}",
            samples.len()
        )));
    }
    for s in samples {
        if s.label != label {
            return Err(Error::Integrity(format!(
                "generator `{name}` labelled a class-{label} sample as {}",
                s.label
            )));
        }
        if s.provenance != Provenance::Synthetic {
            return Err(Error::Integrity(format!(
                "generator `{name}` returned a sample not marked synthetic"
            )));
        }
        if s.features.len() != dim {
            return Err(Error::Integrity(format!(
                "generator `{name}` returned dimension {}, expected {dim}",
                s.features.len()
            )));
        }
    }
    Ok(())
}
