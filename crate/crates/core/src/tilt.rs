//! First level: the antenna tilt learner.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::gaussian::{log_density_from_mahalanobis, mahalanobis_extrema};
use crate::math::interval::interval_forward;
use crate::math::{GaussianPolicy, MlpNetwork, OptimizerKind};
use crate::network::{NetworkParams, TiltVector};
use crate::ppo::{self, AdvantageNorm, Optimizers, PpoConfig, Sample, WorstCaseMethod};
use crate::twin::{EpochBuffer, Source, TiltAction, TiltActor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustPpoConfig {
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
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    /// Initial `log_std` in normalized action units.
    pub init_log_std: f64,
    /// Multiplier on the initial output-layer weights of the policy mean.
    pub output_gain: f64,
    /// Rewards are divided by this before learning; `0` means the network's reward bound.
    pub reward_scale: f64,
}

impl Default for RobustPpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            kappa: 0.5,
            discount: 0.99,
            policy_lr: 3e-3,
            value_lr: 3e-4,
            inner_epochs: 4,
            minibatch_size: 16,
            advantage_norm: AdvantageNorm::Standardize,
            worst_case: WorstCaseMethod::Interval,
            sampled_perturbations: 32,
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            output_gain: 0.01,
            reward_scale: 0.0,
        }
    }
}

impl RobustPpoConfig {
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.clip,
            kappa: self.kappa,
            discount: self.discount,
            policy_lr: self.policy_lr,
            value_lr: self.value_lr,
            inner_epochs: self.inner_epochs,
            minibatch_size: self.minibatch_size,
            advantage_norm: self.advantage_norm,
            worst_case: self.worst_case,
            sampled_perturbations: self.sampled_perturbations,
            optimizer: self.optimizer,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo().validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if !self.init_log_std.is_finite() || !self.output_gain.is_finite() {
            return Err(Error::Config("init_log_std and output_gain must be finite".into()));
        }
        if !(self.reward_scale >= 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::Config("reward_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch summary handed to the second level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean raw reward of the epoch's transitions.
    pub mean_reward: f64,
    pub physical_delay: f64,
    pub skipped: usize,
}

/// Tilt policy and value network with their optimizer state.
#[derive(Debug, Clone)]
pub struct TiltAgent {
    pub policy: GaussianPolicy,
    pub value: MlpNetwork,
    cfg: RobustPpoConfig,
    params: NetworkParams,
    optimizers: Optimizers,
}

impl TiltAgent {
    pub fn new<R: RngCore + ?Sized>(params: &NetworkParams, cfg: &RobustPpoConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let n_in = 2 * params.num_users;
        let mut sizes = vec![n_in];
        sizes.extend(&cfg.hidden);
        sizes.push(params.num_cells);
        let mean_net = MlpNetwork::random(&sizes, cfg.output_gain, rng)?;
        *sizes.last_mut().expect("non-empty") = 1;
        let value = MlpNetwork::random(&sizes, 1.0, rng)?;
        Ok(Self {
            policy: GaussianPolicy::new(mean_net, vec![cfg.init_log_std; params.num_cells])?,
            value,
            cfg: cfg.clone(),
            params: params.clone(),
            optimizers: Optimizers::new(cfg.optimizer),
        })
    }

    pub fn config(&self) -> &RobustPpoConfig {
        &self.cfg
    }

    pub fn normalize_state(&self, state: &[f64]) -> Vec<f64> {
        state.iter().map(|x| x / self.params.coverage_radius).collect()
    }

    pub fn reward_scale(&self) -> f64 {
        if self.cfg.reward_scale > 0.0 {
            self.cfg.reward_scale
        } else {
            self.params.reward_bound()
        }
    }

    /// Learning samples in network units. `noise_bound` is the twin's error
    /// bound in meters.
    pub fn samples(&self, buffer: &EpochBuffer, noise_bound: f64) -> Vec<Sample> {
        let scale = self.reward_scale();
        let radius = noise_bound / self.params.coverage_radius;
        buffer
            .transitions
            .iter()
            .map(|t| Sample {
                state: self.normalize_state(&t.state),
                action: t.action.z.clone(),
                reward: t.reward / scale,
                next_state: self.normalize_state(&t.next_state),
                terminal: false,
                noise_radius: match t.source {
                    Source::Physical => 0.0,
                    Source::Twin => radius,
                },
            })
            .collect()
    }

    /// One policy/value update on a completed epoch buffer.
    pub fn train_epoch<R: RngCore + ?Sized, S: RngCore + ?Sized>(
        &mut self,
        buffer: &EpochBuffer,
        noise_bound: f64,
        shuffle_rng: &mut S,
        adversary_rng: &mut R,
    ) -> Result<TrainStats> {
        let samples = self.samples(buffer, noise_bound);
        let stats = ppo::ppo_update(
            &mut self.policy,
            &mut self.value,
            &samples,
            &self.cfg.ppo(),
            &mut self.optimizers,
            shuffle_rng,
            adversary_rng,
        )?;
        Ok(TrainStats {
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            mean_reward: buffer.mean_reward(),
            physical_delay: buffer.physical_delay_total,
            skipped: stats.skipped,
        })
    }
}

/// Samples a normalized action, clamps it to `[-1, 1]` and maps it onto the tilt range.
pub fn select_action(
    policy: &GaussianPolicy,
    normalized_state: &[f64],
    params: &NetworkParams,
    rng: &mut dyn RngCore,
) -> Result<TiltAction> {
    let z: Vec<f64> = policy
        .sample(normalized_state, rng)?
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    let log_density = policy.log_density(normalized_state, &z)?;
    let tilts = TiltVector::from_normalized(&z, params)?;
    Ok(TiltAction { z, tilts, log_density })
}

impl TiltActor for TiltAgent {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<TiltAction> {
        select_action(&self.policy, &self.normalize_state(state), &self.params, rng)
    }
}

/// Log of the worst-case density of `action` over all means reachable from
/// states within `noise_radius` of `state`: the pessimistic (largest-distance)
/// density when `advantage >= 0`, the optimistic one otherwise.
pub fn worst_case_log_density(
    policy: &GaussianPolicy,
    state: &[f64],
    action: &[f64],
    advantage: f64,
    noise_radius: f64,
) -> Result<f64> {
    let lo: Vec<f64> = state.iter().map(|x| x - noise_radius).collect();
    let hi: Vec<f64> = state.iter().map(|x| x + noise_radius).collect();
    let interval = interval_forward(&policy.mean_net, &lo, &hi)?;
    let (d_lo, d_hi) = mahalanobis_extrema(action, &interval, &policy.log_std)?;
    let d = if advantage >= 0.0 { d_hi } else { d_lo };
    Ok(log_density_from_mahalanobis(d, &policy.log_std))
}

pub fn worst_case_density(
    policy: &GaussianPolicy,
    state: &[f64],
    action: &[f64],
    advantage: f64,
    noise_radius: f64,
) -> Result<f64> {
    Ok(worst_case_log_density(policy, state, action, advantage, noise_radius)?.exp())
}
