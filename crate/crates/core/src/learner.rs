//! Local training: a linear softmax classifier, its FedAvg / FedProx / FedRS
//! objectives with analytic gradients, and an AdamW optimizer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::taskgen::LabeledSample;

/// Weights `W` (classes x dim, row-major) followed by biases `b`, stored as
/// one flat vector of length `classes * (dim + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    classes: usize,
    dim: usize,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            theta: vec![0.0; classes * (dim + 1)],
        }
    }

    pub fn from_flat(classes: usize, dim: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != classes * (dim + 1) {
            return Err(Error::Integrity(format!(
                "flat parameter vector has length {}, expected {}",
                theta.len(),
                classes * (dim + 1)
            )));
        }
        Ok(Self { classes, dim, theta })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.theta
    }

    /// Number of leading flat entries that are weights (the rest are biases).
    pub fn weight_len(&self) -> usize {
        self.classes * self.dim
    }

    pub fn weight(&self, class: usize) -> &[f64] {
        &self.theta[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.theta[self.weight_len() + class]
    }

    /// Unscaled logits `w_y . h + b_y`.
    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim {
            return Err(Error::Domain(format!(
                "feature length {} does not match model dimension {}",
                h.len(),
                self.dim
            )));
        }
        Ok((0..self.classes)
            .map(|y| dot(self.weight(y), h) + self.bias(y))
            .collect())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.classes == other.classes && self.dim == other.dim
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    pub fn squared_distance(&self, other: &ModelParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum LocalObjective {
    FedAvg,
    FedProx {
        mu: f64,
    },
    /// Logits of classes outside `observed` are multiplied by `alpha`.
    FedRs {
        alpha: f64,
        observed: Vec<bool>,
    },
}

impl LocalObjective {
    /// FedRS objective whose observed set is the labels present in `data`.
    pub fn fedrs_for(alpha: f64, data: &[LabeledSample], classes: usize) -> Self {
        let mut observed = vec![false; classes];
        for s in data {
            observed[s.label] = true;
        }
        LocalObjective::FedRs { alpha, observed }
    }

    fn logit_scales(&self, classes: usize) -> Option<Vec<f64>> {
        match self {
            LocalObjective::FedRs { alpha, observed } => Some(
                (0..classes)
                    .map(|y| {
                        if observed.get(y).copied().unwrap_or(false) {
                            1.0
                        } else {
                            *alpha
                        }
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    fn proximal_mu(&self) -> Option<f64> {
        match self {
            LocalObjective::FedProx { mu } if *mu != 0.0 => Some(*mu),
            _ => None,
        }
    }
}

fn log_softmax_in_place(z: &mut [f64]) {
    let peak = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = peak + z.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
    for v in z {
        *v -= lse;
    }
}

fn scaled_logits(params: &ModelParams, h: &[f64], scales: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut z = params.logits(h)?;
    if let Some(s) = scales {
        for (zi, si) in z.iter_mut().zip(s) {
            *zi *= si;
        }
    }
    Ok(z)
}

/// Class probabilities, with FedRS logit scaling when the objective asks
/// for it.
pub fn predict_proba(params: &ModelParams, h: &[f64], objective: &LocalObjective) -> Result<Vec<f64>> {
    let scales = objective.logit_scales(params.classes);
    let mut z = scaled_logits(params, h, scales.as_deref())?;
    log_softmax_in_place(&mut z);
    Ok(z.into_iter().map(f64::exp).collect())
}

/// Mean cross-entropy over `batch` plus the FedProx penalty.
pub fn local_loss(
    params: &ModelParams,
    batch: &[LabeledSample],
    objective: &LocalObjective,
    global: &ModelParams,
) -> Result<f64> {
    let refs: Vec<&LabeledSample> = batch.iter().collect();
    loss_and_gradient(params, &refs, objective, global, false).map(|(loss, _)| loss)
}

/// Analytic gradient of [`local_loss`] with respect to the flat parameters.
pub fn local_gradient(
    params: &ModelParams,
    batch: &[LabeledSample],
    objective: &LocalObjective,
    global: &ModelParams,
) -> Result<Vec<f64>> {
    let refs: Vec<&LabeledSample> = batch.iter().collect();
    loss_and_gradient(params, &refs, objective, global, true).map(|(_, g)| g)
}

fn loss_and_gradient(
    params: &ModelParams,
    batch: &[&LabeledSample],
    objective: &LocalObjective,
    global: &ModelParams,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    if !params.same_shape(global) {
        return Err(Error::Integrity("local and global models differ in shape".into()));
    }
    let classes = params.classes;
    let dim = params.dim;
    let wlen = params.weight_len();
    let scales = objective.logit_scales(classes);
    let inv_n = 1.0 / batch.len() as f64;

    let mut loss = 0.0;
    let mut grad = if want_grad {
        vec![0.0; params.theta.len()]
    } else {
        Vec::new()
    };
    for sample in batch {
        if sample.label >= classes {
            return Err(Error::Domain(format!("label {} out of range", sample.label)));
        }
        let mut z = scaled_logits(params, &sample.features, scales.as_deref())?;
        log_softmax_in_place(&mut z);
        loss -= z[sample.label];
        if want_grad {
            for (y, log_p) in z.iter().enumerate() {
                let mut dz = log_p.exp();
                if y == sample.label {
                    dz -= 1.0;
                }
                if let Some(s) = &scales {
                    dz *= s[y];
                }
                let coeff = dz * inv_n;
                let row = &mut grad[y * dim..(y + 1) * dim];
                for (g, x) in row.iter_mut().zip(&sample.features) {
                    *g += coeff * x;
                }
                grad[wlen + y] += coeff;
            }
        }
    }
    loss *= inv_n;

    if let Some(mu) = objective.proximal_mu() {
        loss += 0.5 * mu * params.squared_distance(global);
        if want_grad {
            for ((g, t), t0) in grad.iter_mut().zip(&params.theta).zip(&global.theta) {
                *g += mu * (t - t0);
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lr_local: f64,
    pub lr_global: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr_local: 0.05,
            lr_global: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 32,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, "must be positive and finite"))
            }
        };
        positive("lr_local", self.lr_local)?;
        positive("lr_global", self.lr_global)?;
        positive("eps", self.eps)?;
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected moment after folding in `sample` at step `t`:
/// `(beta * prev + (1 - beta) * sample) / (1 - beta^t)`.
///
/// Distributed over the two terms so that at `t = 1` (where `prev` is zero)
/// the factor `(1 - beta) / (1 - beta)` is exactly one and the estimate
/// equals `sample` bit for bit.
pub fn corrected_moment(prev: f64, sample: f64, beta: f64, t: u32) -> f64 {
    let correction = 1.0 - beta.powi(t as i32);
    beta * prev / correction + ((1.0 - beta) / correction) * sample
}

/// One AdamW step over a flat parameter slice. Weight decay applies to the
/// first `decay_len` entries only.
pub fn adamw_update(
    theta: &mut [f64],
    state: &mut OptimizerState,
    grad: &[f64],
    hp: &HyperParams,
    decay_len: usize,
) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::Integrity(format!(
            "AdamW length mismatch: params {}, grad {}, state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Integrity(format!("non-finite gradient at coordinate {i}")));
    }
    state.t += 1;
    let t = state.t;
    for i in 0..theta.len() {
        let g = grad[i];
        let sq = g * g;
        let m_hat = corrected_moment(state.m[i], g, hp.beta1, t);
        let v_hat = corrected_moment(state.v[i], sq, hp.beta2, t);
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * sq;
        let decay = if i < decay_len { hp.weight_decay * theta[i] } else { 0.0 };
        theta[i] -= hp.lr_local * (m_hat / (v_hat.sqrt() + hp.eps) + decay);
    }
    if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
        return Err(Error::Integrity(format!("parameter {i} became non-finite")));
    }
    Ok(())
}

/// AdamW step on a model; biases are not weight-decayed.
pub fn adamw_step(params: &mut ModelParams, state: &mut OptimizerState, grad: &[f64], hp: &HyperParams) -> Result<()> {
    let decay_len = params.weight_len();
    adamw_update(&mut params.theta, state, grad, hp, decay_len)
}

/// A local training session: a copy of the global model plus fresh
/// optimizer state.
pub struct LocalSession<'a> {
    params: ModelParams,
    global: &'a ModelParams,
    objective: &'a LocalObjective,
    hp: &'a HyperParams,
    state: OptimizerState,
}

impl<'a> LocalSession<'a> {
    pub fn new(global: &'a ModelParams, objective: &'a LocalObjective, hp: &'a HyperParams) -> Self {
        Self {
            params: global.clone(),
            global,
            objective,
            hp,
            state: OptimizerState::new(global.theta.len()),
        }
    }

    pub fn steps(&self) -> u32 {
        self.state.t
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// One shuffled pass over `data`. Returns the sample-weighted mean of
    /// the mini-batch losses seen during the pass.
    pub fn run_epoch(&mut self, data: &[LabeledSample], rng: &mut StreamRng) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Domain("local training on an empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.hp.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = loss_and_gradient(&self.params, &batch, self.objective, self.global, true)?;
            total += loss * batch.len() as f64;
            adamw_step(&mut self.params, &mut self.state, &grad, self.hp)?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn finish(self) -> ModelParams {
        self.params
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome {
    pub params: ModelParams,
    pub steps: u32,
    /// Mean mini-batch loss over the final epoch.
    pub train_loss: f64,
}

/// Runs `epochs` passes of mini-batch AdamW starting from `global`.
pub fn train_local(
    global: &ModelParams,
    data: &[LabeledSample],
    objective: &LocalObjective,
    hp: &HyperParams,
    epochs: usize,
    rng: &mut StreamRng,
) -> Result<LocalOutcome> {
    let mut session = LocalSession::new(global, objective, hp);
    let mut train_loss = f64::NAN;
    for _ in 0..epochs {
        train_loss = session.run_epoch(data, rng)?;
    }
    let steps = session.steps();
    Ok(LocalOutcome {
        params: session.finish(),
        steps,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn sample(features: Vec<f64>, label: usize) -> LabeledSample {
        LabeledSample::original(features, label)
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let p = predict_proba(&ModelParams::zeros(5, 3), &[1.0, -2.0, 0.5], &LocalObjective::FedAvg).unwrap();
        for x in p {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn fedrs_scales_missing_class_logits() {
        // biases (1, 1), zero weights: logits (1, 1); class 1 missing.
        let params = ModelParams::from_flat(2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let objective = LocalObjective::FedRs {
            alpha: 0.5,
            observed: vec![true, false],
        };
        let p = predict_proba(&params, &[3.0], &objective).unwrap();
        let expected0 = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((p[0] - expected0).abs() < 1e-12);
        assert!((p[0] - 0.62246).abs() < 1e-5);
        assert!((p[1] - 0.37754).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        assert!(matches!(
            predict_proba(&ModelParams::zeros(2, 3), &[1.0], &LocalObjective::FedAvg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn uniform_prediction_cross_entropy_is_ln_c() {
        let batch = vec![sample(vec![0.3, 0.1], 2), sample(vec![-1.0, 4.0], 0)];
        let zero = ModelParams::zeros(4, 2);
        let loss = local_loss(&zero, &batch, &LocalObjective::FedAvg, &zero).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn proximal_term() {
        let batch = vec![sample(vec![0.3], 1)];
        let global = ModelParams::zeros(2, 1);
        let prox = LocalObjective::FedProx { mu: 2.0 };
        let same = local_loss(&global, &batch, &prox, &global).unwrap();
        let plain = local_loss(&global, &batch, &LocalObjective::FedAvg, &global).unwrap();
        assert_eq!(same, plain);

        // ||theta - global||^2 = 4 with mu = 2 adds 4.0
        let moved = ModelParams::from_flat(2, 1, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let with = local_loss(&moved, &batch, &prox, &global).unwrap();
        let without = local_loss(&moved, &batch, &LocalObjective::FedAvg, &global).unwrap();
        assert!((with - without - 4.0).abs() < 1e-12);
    }

    #[test]
    fn proximal_gradient_difference() {
        let batch = vec![sample(vec![0.3, -0.7], 1), sample(vec![1.1, 0.2], 0)];
        let params = ModelParams::from_flat(3, 2, (0..9).map(|i| 0.1 * i as f64 - 0.3).collect()).unwrap();
        let global = ModelParams::from_flat(3, 2, (0..9).map(|i| 0.05 * i as f64).collect()).unwrap();
        let mu = 0.7;
        let a = local_gradient(&params, &batch, &LocalObjective::FedProx { mu }, &global).unwrap();
        let b = local_gradient(&params, &batch, &LocalObjective::FedAvg, &global).unwrap();
        for i in 0..9 {
            let expected = mu * (params.as_flat()[i] - global.as_flat()[i]);
            assert!((a[i] - b[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_fit_has_tiny_gradient() {
        // Zero-variance two-class data at x = -1 / +1 with a large margin.
        let batch = vec![sample(vec![-1.0], 0), sample(vec![1.0], 1)];
        let params = ModelParams::from_flat(2, 1, vec![-10.0, 10.0, 0.0, 0.0]).unwrap();
        let g = local_gradient(&params, &batch, &LocalObjective::FedAvg, &params).unwrap();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn adamw_single_step_by_hand() {
        let hp = HyperParams {
            lr_local: 0.1,
            weight_decay: 0.0,
            ..HyperParams::default()
        };
        let mut theta = [0.0];
        let mut state = OptimizerState::new(1);
        adamw_update(&mut theta, &mut state, &[2.0], &hp, 1).unwrap();
        assert_eq!(state.t, 1);
        assert!((state.m[0] - 0.2).abs() < 1e-15);
        assert!((state.v[0] - 0.004).abs() < 1e-15);
        assert_eq!(corrected_moment(0.0, 2.0, 0.9, 1), 2.0);
        assert_eq!(corrected_moment(0.0, 4.0, 0.999, 1), 4.0);
        assert!((theta[0] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let hp = HyperParams {
            lr_local: 0.1,
            weight_decay: 0.3,
            ..HyperParams::default()
        };
        let mut theta = [2.0, -1.0];
        let mut state = OptimizerState::new(2);
        adamw_update(&mut theta, &mut state, &[0.0, 0.0], &hp, 2).unwrap();
        assert_eq!(theta, [2.0 * (1.0 - 0.1 * 0.3), -(1.0 - 0.1 * 0.3)]);
    }

    #[test]
    fn biases_are_not_decayed() {
        let hp = HyperParams {
            weight_decay: 0.5,
            ..HyperParams::default()
        };
        let mut params = ModelParams::from_flat(1, 1, vec![1.0, 1.0]).unwrap();
        let mut state = OptimizerState::new(2);
        adamw_step(&mut params, &mut state, &[0.0, 0.0], &hp).unwrap();
        assert!(params.as_flat()[0] < 1.0);
        assert_eq!(params.as_flat()[1], 1.0);
    }

    #[test]
    fn constant_gradient_normalised_step_tends_to_one() {
        let hp = HyperParams {
            lr_local: 1e-3,
            weight_decay: 0.0,
            ..HyperParams::default()
        };
        let mut theta = [0.0, 0.0];
        let mut state = OptimizerState::new(2);
        let grad = [0.37, -5.0];
        let mut last = theta;
        for _ in 0..2000 {
            adamw_update(&mut theta, &mut state, &grad, &hp, 2).unwrap();
            for i in 0..2 {
                let step = (last[i] - theta[i]) / hp.lr_local;
                assert!(step.abs() <= 1.0 + 1e-6);
                last[i] = theta[i];
            }
        }
        let m_hat = state.m[0] / (1.0 - hp.beta1.powi(2000));
        let v_hat = state.v[0] / (1.0 - hp.beta2.powi(2000));
        assert!((m_hat / (v_hat.sqrt() + hp.eps) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut theta = [0.0];
        let mut state = OptimizerState::new(1);
        let err = adamw_update(&mut theta, &mut state, &[f64::NAN], &HyperParams::default(), 1);
        assert!(matches!(err, Err(Error::Integrity(_))));
    }

    fn toy_data(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let y = i % 3;
                let x = [y as f64 - 1.0 + 0.01 * i as f64, (i % 5) as f64 * 0.1];
                sample(x.to_vec(), y)
            })
            .collect()
    }

    #[test]
    fn full_batch_takes_one_step_per_epoch() {
        let data = toy_data(20);
        let hp = HyperParams {
            batch_size: 64,
            ..HyperParams::default()
        };
        let global = ModelParams::zeros(3, 2);
        let out = train_local(
            &global,
            &data,
            &LocalObjective::FedAvg,
            &hp,
            4,
            &mut rng::stream(0, "t", 0, 0),
        )
        .unwrap();
        assert_eq!(out.steps, 4);
    }

    #[test]
    fn zero_learning_rate_returns_global() {
        let data = toy_data(20);
        let hp = HyperParams {
            lr_local: 0.0,
            ..HyperParams::default()
        };
        let global = ModelParams::from_flat(3, 2, vec![0.5; 9]).unwrap();
        let out = train_local(
            &global,
            &data,
            &LocalObjective::FedAvg,
            &hp,
            3,
            &mut rng::stream(0, "t", 0, 0),
        )
        .unwrap();
        assert_eq!(out.params, global);
    }

    #[test]
    fn sessions_do_not_share_state() {
        let data = toy_data(30);
        let hp = HyperParams::default();
        let global = ModelParams::zeros(3, 2);
        let a = train_local(
            &global,
            &data,
            &LocalObjective::FedAvg,
            &hp,
            3,
            &mut rng::stream(1, "t", 0, 0),
        )
        .unwrap();
        let b = train_local(
            &global,
            &data,
            &LocalObjective::FedAvg,
            &hp,
            3,
            &mut rng::stream(1, "t", 0, 0),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn softmax_normalised_and_shift_invariant(
            raw in prop::collection::vec(-20.0f64..20.0, 4),
            shift in -50.0f64..50.0,
        ) {
            // zero weights; biases carry the logits
            let mut theta = vec![0.0; 4 * 2];
            theta.extend_from_slice(&raw);
            let a = ModelParams::from_flat(4, 2, theta.clone()).unwrap();
            for b in &mut theta[8..] {
                *b += shift;
            }
            let b = ModelParams::from_flat(4, 2, theta).unwrap();
            let pa = predict_proba(&a, &[0.0, 0.0], &LocalObjective::FedAvg).unwrap();
            let pb = predict_proba(&b, &[0.0, 0.0], &LocalObjective::FedAvg).unwrap();
            prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn bias_correction_is_exact_at_first_step(g in -1e3f64..1e3, b1 in 0.0f64..0.999, b2 in 0.0f64..0.9999) {
            prop_assert_eq!(corrected_moment(0.0, g, b1, 1), g);
            prop_assert_eq!(corrected_moment(0.0, g * g, b2, 1), g * g);
        }
    }
}
