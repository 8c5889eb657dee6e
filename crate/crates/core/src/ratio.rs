//! Second level: the learner that picks each epoch's physical/twin data ratio,
//! and the two-level training loop.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{GaussianPolicy, MlpNetwork, OptimizerKind};
use crate::network::{NetworkParams, PhysicalNetwork};
use crate::ppo::{self, AdvantageNorm, Optimizers, PpoConfig, Sample, WorstCaseMethod};
use crate::rng::Streams;
use crate::tilt::{RobustPpoConfig, TiltAgent, TrainStats};
use crate::twin::{collect_epoch, CollectRngs, DntConfig, EpochBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaPpoConfig {
    /// Penalty per unit of physical collection delay above the budget.
    pub penalty: f64,
    pub clip: f64,
    pub discount: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Scale the learning rates of the `k`-th update by `1 / sqrt(1 + k)`.
    pub lr_decay: bool,
    pub inner_epochs: usize,
    pub minibatch_size: usize,
    /// First-level epochs per meta update.
    pub batch_epochs: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub output_gain: f64,
    /// How meta rewards are rescaled before learning; metrics keep the raw value.
    pub reward_transform: RewardTransform,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: f64,
}

impl Default for MetaPpoConfig {
    fn default() -> Self {
        Self {
            penalty: 0.005,
            clip: 0.2,
            discount: 0.99,
            policy_lr: 0.3,
            value_lr: 3e-4,
            lr_decay: true,
            inner_epochs: 4,
            minibatch_size: 8,
            batch_epochs: 8,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            output_gain: 0.01,
            reward_transform: RewardTransform::Symlog,
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: 0.5,
        }
    }
}

impl MetaPpoConfig {
    /// Update hyperparameters for the `k`-th meta update.
    pub fn ppo(&self, k: usize) -> PpoConfig {
        let decay = if self.lr_decay { 1.0 / (1.0 + k as f64).sqrt() } else { 1.0 };
        PpoConfig {
            clip: self.clip,
            kappa: 0.0,
            discount: self.discount,
            policy_lr: self.policy_lr * decay,
            value_lr: self.value_lr * decay,
            inner_epochs: self.inner_epochs,
            minibatch_size: self.minibatch_size,
            advantage_norm: AdvantageNorm::None,
            worst_case: WorstCaseMethod::Interval,
            sampled_perturbations: 0,
            optimizer: self.optimizer,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo(0).validate()?;
        if !(self.penalty >= 0.0) || !self.penalty.is_finite() {
            return Err(Error::Config(format!("penalty must be >= 0, got {}", self.penalty)));
        }
        if self.batch_epochs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("batch_epochs and hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardTransform {
    Raw,
    /// Running mean/std standardization.
    Standardize,
    /// `sign(r) ln(1 + |r|)`, then running standardization. Keeps rare huge
    /// delay penalties from swamping the scale.
    #[default]
    Symlog,
}

pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    /// Centered and, once the spread is measurable, scaled.
    pub fn standardize(&self, x: f64) -> f64 {
        let s = self.std();
        if s > 1e-8 {
            (x - self.mean) / s
        } else {
            x - self.mean
        }
    }
}

/// Raw feedback from the previous first-level epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaState {
    pub prev_policy_loss: f64,
    pub prev_mean_reward: f64,
}

/// Standardizes both state features with their own running statistics.
#[derive(Debug, Clone, Default)]
pub struct MetaStateNormalizer {
    loss: RunningStats,
    reward: RunningStats,
}

impl MetaStateNormalizer {
    /// Network input for the first epoch, before any feedback exists.
    pub fn bootstrap() -> [f64; 2] {
        [0.0, 0.0]
    }

    pub fn observe(&mut self, s: MetaState) -> Result<[f64; 2]> {
        if !s.prev_policy_loss.is_finite() || !s.prev_mean_reward.is_finite() {
            return Err(Error::Divergence("non-finite meta state".into()));
        }
        self.loss.push(s.prev_policy_loss);
        self.reward.push(s.prev_mean_reward);
        Ok([
            self.loss.standardize(s.prev_policy_loss),
            self.reward.standardize(s.prev_mean_reward),
        ])
    }
}

pub fn logistic(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// `(ρ, pre-squash sample, its log-density)`.
pub fn select_ratio<R: Rng + ?Sized>(state: &[f64], policy: &GaussianPolicy, rng: &mut R) -> Result<(f64, f64, f64)> {
    let y = policy.sample(state, rng)?;
    if !y[0].is_finite() {
        return Err(Error::Divergence("non-finite ratio sample".into()));
    }
    let log_density = policy.log_density(state, &y)?;
    Ok((logistic(y[0]).clamp(0.0, 1.0), y[0], log_density))
}

/// Mean first-level reward minus `ξ` times the delay above budget.
pub fn meta_reward(mean_reward: f64, physical_delay: f64, penalty: f64, delay_budget: f64) -> f64 {
    mean_reward - delay_penalty(physical_delay, penalty, delay_budget)
}

pub fn delay_penalty(physical_delay: f64, penalty: f64, delay_budget: f64) -> f64 {
    if physical_delay > delay_budget {
        penalty * (physical_delay - delay_budget)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTransition {
    pub state: [f64; 2],
    /// Pre-squash Gaussian sample; `ρ = logistic(action)`.
    pub action: f64,
    pub ratio: f64,
    /// Reward as learned from (possibly standardized).
    pub reward: f64,
    pub next_state: [f64; 2],
    pub terminal: bool,
}

/// Ratio policy and value network with optimizer state.
#[derive(Debug, Clone)]
pub struct RatioAgent {
    pub policy: GaussianPolicy,
    pub value: MlpNetwork,
    cfg: MetaPpoConfig,
    optimizers: Optimizers,
    updates: usize,
}

impl RatioAgent {
    pub fn new<R: RngCore + ?Sized>(cfg: &MetaPpoConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut sizes = vec![2];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let mean_net = MlpNetwork::random(&sizes, cfg.output_gain, rng)?;
        let value = MlpNetwork::random(&sizes, 1.0, rng)?;
        Ok(Self {
            policy: GaussianPolicy::new(mean_net, vec![cfg.init_log_std])?,
            value,
            cfg: cfg.clone(),
            optimizers: Optimizers::new(cfg.optimizer),
            updates: 0,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Clipped-surrogate update on a meta batch; returns the gradient norm at
    /// the pre-update iterate.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[MetaTransition], shuffle_rng: &mut R) -> Result<ppo::UpdateStats> {
        let samples: Vec<Sample> = batch
            .iter()
            .map(|t| Sample {
                state: t.state.to_vec(),
                action: vec![t.action],
                reward: t.reward,
                next_state: t.next_state.to_vec(),
                terminal: t.terminal,
                noise_radius: 0.0,
            })
            .collect();
        let cfg = self.cfg.ppo(self.updates);
        // the adversarial term is off, so this stream is never drawn from
        let mut unused = crate::rng::substream(0, crate::rng::Stream::Adversary);
        let stats = ppo::ppo_update(
            &mut self.policy,
            &mut self.value,
            &samples,
            &cfg,
            &mut self.optimizers,
            shuffle_rng,
            &mut unused,
        )?;
        self.updates += 1;
        Ok(stats)
    }
}

/// Who picks `ρ_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioController {
    Learned,
    /// `ρ_e ~ Uniform[0, 1]` every epoch, no learning.
    Random,
    Fixed(f64),
}

/// Everything one two-level run needs.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub network: NetworkParams,
    pub dnt: DntConfig,
    pub tilt: RobustPpoConfig,
    pub meta: MetaPpoConfig,
    pub controller: RatioController,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingSetup {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.dnt.validate()?;
        self.tilt.validate()?;
        self.meta.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if let RatioController::Fixed(r) = self.controller {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("pinned ratio must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ratio: f64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub physical_delay: f64,
    pub cumulative_delay: f64,
    pub meta_reward: f64,
    /// Most recent meta gradient norm; NaN before the first meta update.
    pub meta_grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingRecord {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch at which the update ran, gradient norm)` per meta update.
    pub grad_norms: Vec<(usize, f64)>,
}

/// Runs the two-level loop. `on_epoch` sees every collected buffer (used for
/// transition logs).
pub fn run_hierarchical_training(
    setup: &TrainingSetup,
    on_epoch: &mut dyn FnMut(usize, &EpochBuffer) -> Result<()>,
) -> Result<TrainingRecord> {
    setup.validate()?;
    let mut st = Streams::new(setup.seed);
    let mut env = PhysicalNetwork::new(setup.network.clone(), &mut st.mobility)?;
    let mut tilt = TiltAgent::new(&setup.network, &setup.tilt, &mut st.init)?;
    let mut meta = match setup.controller {
        RatioController::Learned => Some(RatioAgent::new(&setup.meta, &mut st.init)?),
        _ => None,
    };
    let mut normalizer = MetaStateNormalizer::default();
    let mut reward_stats = RunningStats::default();
    let mut state = MetaStateNormalizer::bootstrap();
    let mut pending: Vec<MetaTransition> = Vec::with_capacity(setup.meta.batch_epochs);
    let mut record = TrainingRecord::default();
    let mut cumulative = 0.0;
    let mut grad_norm = f64::NAN;
    let bound = setup.network.reward_bound();

    for e in 0..setup.epochs {
        let (ratio, action) = match (setup.controller, meta.as_ref()) {
            (RatioController::Learned, Some(agent)) => {
                let (rho, y, _) = select_ratio(&state, &agent.policy, &mut st.meta)?;
                (rho, y)
            }
            (RatioController::Random, _) => (st.meta.random::<f64>(), f64::NAN),
            (RatioController::Fixed(r), _) => (r, f64::NAN),
            (RatioController::Learned, None) => unreachable!("learned controller has an agent"),
        };

        let buffer = collect_epoch(
            &mut env,
            &tilt,
            ratio,
            setup.batch_size,
            &setup.dnt,
            &mut CollectRngs {
                mobility: &mut st.mobility,
                twin_noise: &mut st.twin_noise,
                policy: &mut st.policy,
            },
        )?;
        on_epoch(e, &buffer)?;
        let stats: TrainStats = tilt.train_epoch(&buffer, setup.dnt.noise_bound, &mut st.shuffle, &mut st.adversary)?;

        let r_meta = meta_reward(
            stats.mean_reward,
            stats.physical_delay,
            setup.meta.penalty,
            setup.network.delay_budget,
        );
        let floor = -bound - delay_penalty(stats.physical_delay, setup.meta.penalty, setup.network.delay_budget);
        if !(r_meta <= bound && r_meta >= floor) {
            return Err(Error::Contract(format!("meta reward {r_meta} outside [{floor}, {bound}]")));
        }
        cumulative += stats.physical_delay;

        if let Some(agent) = meta.as_mut() {
            let next_state = normalizer.observe(MetaState {
                prev_policy_loss: stats.policy_loss,
                prev_mean_reward: stats.mean_reward,
            })?;
            let learn_reward = match setup.meta.reward_transform {
                RewardTransform::Raw => r_meta,
                RewardTransform::Standardize => {
                    reward_stats.push(r_meta);
                    reward_stats.standardize(r_meta)
                }
                RewardTransform::Symlog => {
                    let x = symlog(r_meta);
                    reward_stats.push(x);
                    reward_stats.standardize(x)
                }
            };
            let terminal = e + 1 == setup.epochs;
            pending.push(MetaTransition {
                state,
                action,
                ratio,
                reward: learn_reward,
                next_state,
                terminal,
            });
            state = next_state;
            if pending.len() == setup.meta.batch_epochs || terminal {
                let u = agent.update(&pending, &mut st.shuffle)?;
                grad_norm = u.grad_norm;
                record.grad_norms.push((e, u.grad_norm));
                pending.clear();
            }
        }

        record.epochs.push(EpochRecord {
            epoch: e,
            ratio,
            mean_reward: stats.mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            physical_delay: stats.physical_delay,
            cumulative_delay: cumulative,
            meta_reward: r_meta,
            meta_grad_norm: grad_norm,
        });
    }
    Ok(record)
}
