//! Clipped-surrogate policy optimization shared by both learning levels.
//!
//! The policy loss mixes the nominal clipped surrogate with an adversarial
//! surrogate whose numerator is the worst-case density over all policy means
//! reachable under bounded state noise. With `kappa = 0` the adversarial term is
//! never evaluated, which is how the non-robust learners run.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::gaussian::{gaussian_log_density_grad, worst_case_log_density_grad};
use crate::math::interval::{interval_backward, interval_forward_trace, SampledInterval};
use crate::math::{GaussianPolicy, GradientSet, MlpNetwork, Optimizer, OptimizerKind, Parameters};

/// One training sample in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    /// Action in the Gaussian's own space (before any squashing or mapping).
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// No bootstrap from `next_state` when set.
    pub terminal: bool,
    /// Half-width of the input box the state may have been perturbed within.
    pub noise_radius: f64,
}

/// How the range of reachable policy means is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseMethod {
    /// Interval bound propagation: sound.
    #[default]
    Interval,
    /// Min/max over a fixed number of uniformly perturbed inputs: cheaper, not sound.
    Sampled,
}

/// How frozen advantages are rescaled before entering the policy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageNorm {
    #[default]
    None,
    /// Divide by the batch standard deviation.
    Scale,
    /// Subtract the batch mean, then divide by the standard deviation.
    Standardize,
}

/// Hyperparameters of one update; built from the level-specific configs.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub kappa: f64,
    pub discount: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub inner_epochs: usize,
    pub minibatch_size: usize,
    pub advantage_norm: AdvantageNorm,
    pub worst_case: WorstCaseMethod,
    pub sampled_perturbations: usize,
    pub optimizer: OptimizerKind,
    /// Rescale each step's gradient to at most this L2 norm; `0` disables.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            kappa: 0.5,
            discount: 0.99,
            policy_lr: 3e-3,
            value_lr: 3e-4,
            inner_epochs: 4,
            minibatch_size: 16,
            advantage_norm: AdvantageNorm::None,
            worst_case: WorstCaseMethod::Interval,
            sampled_perturbations: 32,
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1), got {}", self.discount)));
        }
        for (name, lr) in [("policy_lr", self.policy_lr), ("value_lr", self.value_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.inner_epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("inner_epochs and minibatch_size must be >= 1".into()));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::Config(format!("max_grad_norm must be >= 0, got {}", self.max_grad_norm)));
        }
        Ok(())
    }
}

/// `A = R + λ V(s') - V(s)`, with `V(s') = 0` on terminal samples.
pub fn advantage(sample: &Sample, value: &MlpNetwork, discount: f64) -> Result<f64> {
    let v = value.forward(&sample.state)?[0];
    let v_next = if sample.terminal {
        0.0
    } else {
        value.forward(&sample.next_state)?[0]
    };
    Ok(sample.reward + discount * v_next - v)
}

pub fn advantages(samples: &[Sample], value: &MlpNetwork, discount: f64) -> Result<Vec<f64>> {
    samples.iter().map(|s| advantage(s, value, discount)).collect()
}

/// Uses the population standard deviation; near-constant batches are only centered (or left alone).
pub fn normalize_advantages(adv: &mut [f64], mode: AdvantageNorm) {
    if mode == AdvantageNorm::None || adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let shift = if mode == AdvantageNorm::Standardize { mean } else { 0.0 };
    let div = if std > 1e-8 { std } else { 1.0 };
    for a in adv.iter_mut() {
        *a = (*a - shift) / div;
    }
}

/// A loss value with its gradient with respect to the owning parameters.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: GradientSet,
    /// Samples dropped because their probability ratio was not finite.
    pub skipped: usize,
}

/// One minibatch view: samples with their frozen advantages and snapshot log-densities.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub samples: &'a [Sample],
    pub indices: &'a [usize],
    pub advantages: &'a [f64],
    pub old_log_density: &'a [f64],
}

impl<'a> Batch<'a> {
    fn iter(&self) -> impl Iterator<Item = (&'a Sample, f64, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| (&self.samples[i], self.advantages[i], self.old_log_density[i]))
    }
}

/// Weight of `d log π` in `-min(r A, clip(r) A)`: `-A r` when the unclipped
/// term is the active one, zero otherwise.
fn clipped_term(log_density: f64, old: f64, adv: f64, clip: f64) -> Option<(f64, f64)> {
    let ratio = (log_density - old).exp();
    if !ratio.is_finite() {
        return None;
    }
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        Some((-unclipped, -unclipped))
    } else {
        Some((-clipped, 0.0))
    }
}

fn nominal_sample(
    policy: &GaussianPolicy,
    sample: &Sample,
    adv: f64,
    old: f64,
    clip: f64,
    inv_n: f64,
    grads: &mut GradientSet,
) -> Result<Option<f64>> {
    let trace = policy.mean_net.forward_trace(&sample.state)?;
    let (logp, d_mean, d_log_std) = gaussian_log_density_grad(trace.output(), &policy.log_std, &sample.action);
    let Some((term, w)) = clipped_term(logp, old, adv, clip) else {
        return Ok(None);
    };
    if w != 0.0 {
        policy.mean_net.accumulate_backward(&trace, &d_mean, w * inv_n, grads)?;
        for (g, d) in grads.log_std.iter_mut().zip(&d_log_std) {
            *g += w * inv_n * d;
        }
    }
    Ok(Some(term))
}

fn finish(total: f64, n: usize, grads: GradientSet, skipped: usize) -> Result<LossGrad> {
    let loss = total / n.max(1) as f64;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence(format!("policy loss became non-finite ({loss})")));
    }
    Ok(LossGrad { loss, grads, skipped })
}

/// Mean of `-min(r A, clip(r, 1-η, 1+η) A)` with `r = π / π_snapshot`.
pub fn surrogate_loss(policy: &GaussianPolicy, batch: Batch<'_>, clip: f64) -> Result<LossGrad> {
    let mut grads = GradientSet::zeros_for(&policy.mean_net, policy.action_dim());
    let inv_n = 1.0 / batch.indices.len().max(1) as f64;
    let (mut total, mut skipped) = (0.0, 0);
    for (s, adv, old) in batch.iter() {
        match nominal_sample(policy, s, adv, old, clip, inv_n, &mut grads)? {
            Some(t) => total += t,
            None => skipped += 1,
        }
    }
    finish(total, batch.indices.len(), grads, skipped)
}

/// Clipped surrogate with the worst-case density in the numerator: the largest
/// Mahalanobis distance for `A >= 0`, the smallest otherwise.
pub fn adversarial_loss<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    batch: Batch<'_>,
    clip: f64,
    method: WorstCaseMethod,
    perturbations: usize,
    rng: &mut R,
) -> Result<LossGrad> {
    let net = &policy.mean_net;
    let mut grads = GradientSet::zeros_for(net, policy.action_dim());
    let inv_n = 1.0 / batch.indices.len().max(1) as f64;
    let (mut total, mut skipped) = (0.0, 0);
    for (s, adv, old) in batch.iter() {
        let r = s.noise_radius;
        if r == 0.0 {
            // a point box: the worst case is the nominal density
            match nominal_sample(policy, s, adv, old, clip, inv_n, &mut grads)? {
                Some(t) => total += t,
                None => skipped += 1,
            }
            continue;
        }
        let pessimistic = adv >= 0.0;
        match method {
            WorstCaseMethod::Interval => {
                let lo: Vec<f64> = s.state.iter().map(|x| x - r).collect();
                let hi: Vec<f64> = s.state.iter().map(|x| x + r).collect();
                let trace = interval_forward_trace(net, &lo, &hi)?;
                let wc = worst_case_log_density_grad(&s.action, trace.output(), &policy.log_std, pessimistic);
                let Some((term, w)) = clipped_term(wc.log_density, old, adv, clip) else {
                    skipped += 1;
                    continue;
                };
                total += term;
                if w != 0.0 {
                    interval_backward(net, &trace, &wc.d_lower, &wc.d_upper, w * inv_n, &mut grads)?;
                    for (g, d) in grads.log_std.iter_mut().zip(&wc.d_log_std) {
                        *g += w * inv_n * d;
                    }
                }
            }
            WorstCaseMethod::Sampled => {
                let offsets: Vec<Vec<f64>> = (0..perturbations)
                    .map(|_| s.state.iter().map(|_| r * (2.0 * rng.random::<f64>() - 1.0)).collect())
                    .collect();
                let sampled = SampledInterval::evaluate(net, &s.state, &offsets)?;
                let wc = worst_case_log_density_grad(&s.action, sampled.output(), &policy.log_std, pessimistic);
                let Some((term, w)) = clipped_term(wc.log_density, old, adv, clip) else {
                    skipped += 1;
                    continue;
                };
                total += term;
                if w != 0.0 {
                    sampled.backward(net, &wc.d_lower, &wc.d_upper, w * inv_n, &mut grads)?;
                    for (g, d) in grads.log_std.iter_mut().zip(&wc.d_log_std) {
                        *g += w * inv_n * d;
                    }
                }
            }
        }
    }
    finish(total, batch.indices.len(), grads, skipped)
}

/// `(1 - κ) L^N + κ L^A`.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub nominal: f64,
    pub adversarial: f64,
    pub grads: GradientSet,
    pub skipped: usize,
}

pub fn policy_loss<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    batch: Batch<'_>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PolicyLoss> {
    let kappa = cfg.kappa;
    if kappa == 0.0 {
        let n = surrogate_loss(policy, batch, cfg.clip)?;
        return Ok(PolicyLoss {
            loss: n.loss,
            nominal: n.loss,
            adversarial: f64::NAN,
            grads: n.grads,
            skipped: n.skipped,
        });
    }
    let a = adversarial_loss(policy, batch, cfg.clip, cfg.worst_case, cfg.sampled_perturbations, rng)?;
    if kappa == 1.0 {
        return Ok(PolicyLoss {
            loss: a.loss,
            nominal: f64::NAN,
            adversarial: a.loss,
            grads: a.grads,
            skipped: a.skipped,
        });
    }
    let n = surrogate_loss(policy, batch, cfg.clip)?;
    let mut grads = n.grads;
    grads.scale(1.0 - kappa);
    grads.add_scaled(&a.grads, kappa)?;
    Ok(PolicyLoss {
        loss: (1.0 - kappa) * n.loss + kappa * a.loss,
        nominal: n.loss,
        adversarial: a.loss,
        grads,
        skipped: n.skipped.max(a.skipped),
    })
}

/// `½ mean(A²)` with `A` recomputed through the value network, differentiated
/// through both `V(s)` and `V(s')`.
pub fn value_loss(value: &MlpNetwork, samples: &[Sample], indices: &[usize], discount: f64) -> Result<LossGrad> {
    let mut grads = GradientSet::zeros_for(value, 0);
    let inv_n = 1.0 / indices.len().max(1) as f64;
    let mut total = 0.0;
    for &i in indices {
        let s = &samples[i];
        let trace = value.forward_trace(&s.state)?;
        let next = if s.terminal {
            None
        } else {
            Some(value.forward_trace(&s.next_state)?)
        };
        let v_next = next.as_ref().map_or(0.0, |t| t.output()[0]);
        let adv = s.reward + discount * v_next - trace.output()[0];
        total += 0.5 * adv * adv;
        value.accumulate_backward(&trace, &[1.0], -adv * inv_n, &mut grads)?;
        if let Some(t) = &next {
            value.accumulate_backward(t, &[1.0], discount * adv * inv_n, &mut grads)?;
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence(format!("value loss became non-finite ({loss})")));
    }
    Ok(LossGrad { loss, grads, skipped: 0 })
}

/// Scales `grads` down to norm `max` when it is larger; `max = 0` leaves it alone.
pub fn clip_grad_norm(grads: &mut GradientSet, max: f64) {
    if max > 0.0 {
        let n = grads.norm();
        if n > max {
            grads.scale(max / n);
        }
    }
}

/// Optimizer state for one policy/value pair.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub policy: Optimizer,
    pub value: Optimizer,
}

impl Optimizers {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            policy: Optimizer::new(kind),
            value: Optimizer::new(kind),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Policy loss over the whole buffer after the update.
    pub policy_loss: f64,
    /// Value loss over the whole buffer after the update.
    pub value_loss: f64,
    /// Norm of the joint policy and value gradient over the whole buffer, before the update.
    pub grad_norm: f64,
    pub skipped: usize,
}

/// Snapshot, frozen advantages, shuffled minibatch passes on the policy, then
/// the same on the value network.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized, S: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut MlpNetwork,
    samples: &[Sample],
    cfg: &PpoConfig,
    optimizers: &mut Optimizers,
    shuffle_rng: &mut S,
    adversary_rng: &mut R,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot update on an empty buffer".into()));
    }
    let mut adv = advantages(samples, value, cfg.discount)?;
    normalize_advantages(&mut adv, cfg.advantage_norm);
    let old: Vec<f64> = samples
        .iter()
        .map(|s| policy.log_density(&s.state, &s.action))
        .collect::<Result<_>>()?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let full = Batch {
        samples,
        indices: &all,
        advantages: &adv,
        old_log_density: &old,
    };

    let start_p = policy_loss(policy, full, cfg, adversary_rng)?;
    let start_v = value_loss(value, samples, &all, cfg.discount)?;
    let grad_norm = (start_p.grads.norm().powi(2) + start_v.grads.norm().powi(2)).sqrt();
    let mut skipped = 0;

    let mut order = all.clone();
    for _ in 0..cfg.inner_epochs {
        order.shuffle(shuffle_rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch = Batch { indices: chunk, ..full };
            let mut l = policy_loss(policy, batch, cfg, adversary_rng)?;
            skipped += l.skipped;
            clip_grad_norm(&mut l.grads, cfg.max_grad_norm);
            optimizers.policy.step(policy, &l.grads, cfg.policy_lr)?;
        }
    }
    for _ in 0..cfg.inner_epochs {
        order.shuffle(shuffle_rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mut l = value_loss(value, samples, chunk, cfg.discount)?;
            clip_grad_norm(&mut l.grads, cfg.max_grad_norm);
            optimizers.value.step(value, &l.grads, cfg.value_lr)?;
        }
    }
    if !policy.param_arrays().iter().all(|a| a.iter().all(|v| v.is_finite())) || !value.is_finite() {
        return Err(Error::Divergence("parameters became non-finite".into()));
    }

    let end_p = policy_loss(policy, full, cfg, adversary_rng)?;
    let end_v = value_loss(value, samples, &all, cfg.discount)?;
    Ok(UpdateStats {
        policy_loss: end_p.loss,
        value_loss: end_v.loss,
        grad_norm,
        skipped,
    })
}
