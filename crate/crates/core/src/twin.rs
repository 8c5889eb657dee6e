//! Transition collection from the physical network and from its digital twin.
//!
//! The twin reports user positions with bounded uniform error; its rewards are
//! recomputed from those noisy positions and its data costs no collection time.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{radio, NetworkParams, PhysicalNetwork, Position, TiltVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Physical,
    Twin,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Physical => "physical",
            Source::Twin => "twin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DntConfig {
    /// Per-coordinate position error bound, meters.
    pub noise_bound: f64,
}

impl Default for DntConfig {
    fn default() -> Self {
        Self { noise_bound: 0.25 }
    }
}

impl DntConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return Err(Error::Config(format!("noise_bound must be >= 0, got {}", self.noise_bound)));
        }
        Ok(())
    }
}

/// Each coordinate plus an independent `Uniform[-ε, ε)` draw. `ε = 0` returns
/// the input unchanged while still consuming the same draws.
pub fn noisy_positions<R: Rng + ?Sized>(positions: &[f64], eps: f64, rng: &mut R) -> Vec<f64> {
    positions
        .iter()
        .map(|x| x + eps * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Output of a tilt policy for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltAction {
    /// Clamped sample in normalized action space `[-1, 1]^C`.
    pub z: Vec<f64>,
    pub tilts: TiltVector,
    pub log_density: f64,
}

/// Anything that maps flattened user positions (meters) to a tilt action.
pub trait TiltActor {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<TiltAction>;
}

/// Always applies the same tilts; used by tests and as a reference controller.
#[derive(Debug, Clone)]
pub struct FixedTilt(pub TiltVector);

impl TiltActor for FixedTilt {
    fn act(&self, _state: &[f64], _rng: &mut dyn RngCore) -> Result<TiltAction> {
        Ok(TiltAction {
            z: vec![0.0; self.0.as_slice().len()],
            tilts: self.0.clone(),
            log_density: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltTransition {
    /// Flattened positions `[x0, y0, x1, y1, ...]`, meters.
    pub state: Vec<f64>,
    pub action: TiltAction,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub source: Source,
    pub delay: f64,
    /// First mobility slot covered by the transition.
    pub slot: u64,
}

pub fn flatten(positions: &[Position]) -> Vec<f64> {
    positions.iter().flat_map(|p| [p[0], p[1]]).collect()
}

pub fn unflatten(state: &[f64]) -> Vec<Position> {
    state.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Random streams consumed during collection.
pub struct CollectRngs<'a, R: RngCore> {
    pub mobility: &'a mut R,
    pub twin_noise: &'a mut R,
    pub policy: &'a mut R,
}

/// Collects one transition spanning `slots_per_action` slots and advances the
/// true network by that many slots.
pub fn collect_transition<R: RngCore>(
    env: &mut PhysicalNetwork,
    actor: &dyn TiltActor,
    source: Source,
    dnt: &DntConfig,
    rngs: &mut CollectRngs<'_, R>,
) -> Result<TiltTransition> {
    let params = env.params().clone();
    let first_slot = env.slot();
    let observe = |positions: &[Position], twin_noise: &mut R| match source {
        Source::Physical => flatten(positions),
        Source::Twin => noisy_positions(&flatten(positions), dnt.noise_bound, twin_noise),
    };

    let state = observe(&env.positions(), rngs.twin_noise);
    let action = actor.act(&state, rngs.policy)?;

    let mut true_slots = Vec::with_capacity(params.slots_per_action);
    let mut seen_slots = Vec::with_capacity(params.slots_per_action);
    for n in 0..params.slots_per_action {
        let pos = env.positions();
        if n == 0 {
            seen_slots.push(unflatten(&state));
        } else {
            seen_slots.push(unflatten(&observe(&pos, rngs.twin_noise)));
        }
        true_slots.push(pos);
        env.advance(rngs.mobility);
    }
    let next_state = observe(&env.positions(), rngs.twin_noise);

    let reward = radio::sum_rate(&seen_slots, &action.tilts, &params);
    check_reward(reward, &params)?;
    let delay = match source {
        Source::Physical => radio::transition_delay(&true_slots, first_slot, &action.tilts, &params),
        Source::Twin => 0.0,
    };
    Ok(TiltTransition {
        state,
        action,
        reward,
        next_state,
        source,
        delay,
        slot: first_slot,
    })
}

fn check_reward(reward: f64, params: &NetworkParams) -> Result<()> {
    if !reward.is_finite() {
        return Err(Error::Divergence("non-finite reward".into()));
    }
    let bound = params.reward_bound();
    if reward > bound * (1.0 + 1e-12) {
        return Err(Error::Contract(format!("reward {reward} exceeds bound {bound}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochBuffer {
    pub transitions: Vec<TiltTransition>,
    pub ratio: f64,
    pub physical_delay_total: f64,
}

impl EpochBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn physical_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.source == Source::Physical).count()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.transitions.len() as f64
    }
}

/// Number of physical transitions for ratio `ρ` and batch size `b`.
pub fn physical_share(ratio: f64, batch_size: usize) -> usize {
    (ratio * batch_size as f64).round_ties_even() as usize
}

/// Physical transitions first, then twin transitions.
pub fn collect_epoch<R: RngCore>(
    env: &mut PhysicalNetwork,
    actor: &dyn TiltActor,
    ratio: f64,
    batch_size: usize,
    dnt: &DntConfig,
    rngs: &mut CollectRngs<'_, R>,
) -> Result<EpochBuffer> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Contract(format!("ratio must lie in [0, 1], got {ratio}")));
    }
    let n_phys = physical_share(ratio, batch_size);
    let mut transitions = Vec::with_capacity(batch_size);
    let mut physical_delay_total = 0.0;
    for b in 0..batch_size {
        let source = if b < n_phys { Source::Physical } else { Source::Twin };
        let t = collect_transition(env, actor, source, dnt, rngs)?;
        physical_delay_total += t.delay;
        transitions.push(t);
    }
    Ok(EpochBuffer {
        transitions,
        ratio,
        physical_delay_total,
    })
}
