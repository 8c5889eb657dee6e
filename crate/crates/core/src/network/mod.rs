//! Single-site, multi-sector cellular network.

pub mod mobility;
pub mod params;
pub mod radio;

use rand::Rng;

pub use mobility::{initial_users, step_mobility, UserState};
pub use params::{MoveProbs, NetworkParams, UplinkInterference};
pub use radio::{
    antenna_gain, associate, downlink_rate, downlink_sinr, round_robin_uploaders, sum_rate, transition_delay,
    uplink_rate, uplink_sinr, user_geometry, Geometry,
};

use crate::error::{Error, Result};

/// Planar user position in meters, BS at the origin.
pub type Position = [f64; 2];

/// Tilt angle per cell, degrees, always within the configured range.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltVector(Vec<f64>);

impl TiltVector {
    pub fn new(values: Vec<f64>, params: &NetworkParams) -> Result<Self> {
        if values.len() != params.num_cells {
            return Err(Error::dim("tilt vector", params.num_cells, values.len()));
        }
        if values.iter().any(|v| !(*v >= params.tilt_min && *v <= params.tilt_max)) {
            return Err(Error::Contract(format!(
                "tilts must lie in [{}, {}]",
                params.tilt_min, params.tilt_max
            )));
        }
        Ok(Self(values))
    }

    /// Maps `z ∈ [-1, 1]` affinely onto the tilt range; `z` is clamped first.
    pub fn from_normalized(z: &[f64], params: &NetworkParams) -> Result<Self> {
        if z.len() != params.num_cells {
            return Err(Error::dim("normalized tilt", params.num_cells, z.len()));
        }
        if z.iter().any(|v| v.is_nan()) {
            return Err(Error::Divergence("NaN tilt action".into()));
        }
        let span = params.tilt_max - params.tilt_min;
        Ok(Self(
            z.iter()
                .map(|v| {
                    let t = params.tilt_min + 0.5 * (v.clamp(-1.0, 1.0) + 1.0) * span;
                    t.clamp(params.tilt_min, params.tilt_max)
                })
                .collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The true environment: user states and the slot counter.
#[derive(Debug, Clone)]
pub struct PhysicalNetwork {
    params: NetworkParams,
    users: Vec<UserState>,
    slot: u64,
}

impl PhysicalNetwork {
    pub fn new<R: Rng + ?Sized>(params: NetworkParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let users = initial_users(&params, rng);
        Ok(Self { params, users, slot: 0 })
    }

    pub fn from_users(params: NetworkParams, users: Vec<UserState>) -> Result<Self> {
        params.validate()?;
        if users.len() != params.num_users {
            return Err(Error::dim("users", params.num_users, users.len()));
        }
        Ok(Self { params, users, slot: 0 })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn positions(&self) -> Vec<Position> {
        self.users.iter().map(|u| u.position).collect()
    }

    /// One mobility slot.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        step_mobility(&mut self.users, &self.params, rng);
        self.slot += 1;
    }
}
