//! Server-side device selection by distance to the uniform class mix.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::taskgen::LabeledSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProportions {
    pub p: Vec<f64>,
    pub source_size: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    L2,
    L1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    Balanced,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Balanced: ascending distance. Random: draw order.
    pub chosen: Vec<usize>,
    pub distances: Vec<f64>,
    pub global_dist: ClassProportions,
}

pub fn class_proportions(data: &[LabeledSample], classes: usize) -> Result<ClassProportions> {
    if data.is_empty() {
        return Err(Error::Domain("class proportions of an empty dataset".into()));
    }
    let mut counts = vec![0usize; classes];
    for s in data {
        if s.label >= classes {
            return Err(Error::Domain(format!("label {} out of range", s.label)));
        }
        counts[s.label] += 1;
    }
    let n = data.len() as f64;
    Ok(ClassProportions {
        p: counts.into_iter().map(|c| c as f64 / n).collect(),
        source_size: data.len(),
    })
}

/// Size-weighted mixture of per-device proportions.
pub fn global_distribution(all: &[ClassProportions]) -> Result<ClassProportions> {
    let first = all
        .first()
        .ok_or_else(|| Error::Domain("global distribution of zero devices".into()))?;
    let classes = first.p.len();
    let total: usize = all.iter().map(|c| c.source_size).sum();
    if total == 0 {
        return Err(Error::Domain("global distribution over empty devices".into()));
    }
    let mut p = vec![0.0; classes];
    for props in all {
        if props.p.len() != classes {
            return Err(Error::Domain("class count differs between devices".into()));
        }
        for (acc, q) in p.iter_mut().zip(&props.p) {
            *acc += q * props.source_size as f64;
        }
    }
    for x in &mut p {
        *x /= total as f64;
    }
    Ok(ClassProportions { p, source_size: total })
}

/// Distance from `props` to the uniform distribution over its classes.
pub fn distance_to_iid(props: &ClassProportions, metric: DistanceMetric) -> f64 {
    let target = 1.0 / props.p.len() as f64;
    let diffs = props.p.iter().map(|&q| q - target);
    match metric {
        DistanceMetric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        DistanceMetric::L1 => diffs.map(f64::abs).sum(),
    }
}

/// Picks `k` devices. Balanced takes the `k` smallest distances with ties
/// going to the lower device id; Random draws `k` distinct ids from `rng`.
pub fn select_devices(
    proportions: &[ClassProportions],
    k: usize,
    strategy: SelectionStrategy,
    metric: DistanceMetric,
    rng: &mut StreamRng,
) -> Result<SelectionResult> {
    let n = proportions.len();
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if k > n {
        return Err(Error::config("k", "k exceeds n"));
    }
    let distances: Vec<f64> = proportions.iter().map(|p| distance_to_iid(p, metric)).collect();
    let global_dist = global_distribution(proportions)?;
    let chosen = match strategy {
        SelectionStrategy::Balanced => k_nearest(&distances, k),
        SelectionStrategy::Random => index::sample(rng, n, k).into_vec(),
    };
    Ok(SelectionResult {
        chosen,
        distances,
        global_dist,
    })
}

/// Indices of the `k` smallest distances, ascending, ties by lower index.
pub fn k_nearest(distances: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
