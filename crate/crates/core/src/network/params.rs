use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-user move probabilities are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MoveProbs {
    /// `[0.2; 5]` for every user.
    #[default]
    Uniform,
    /// One seeded `Dirichlet(1, 1, 1, 1, 1)` draw per user.
    Dirichlet,
}

/// Which path gains enter the uplink interference sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UplinkInterference {
    /// Interference from cell `i` uses the gain and distance between the
    /// uploading user `u` and antenna `i`, scaled by the transmit power of the
    /// active uploader of cell `i` (zero when that cell is empty).
    #[default]
    ServedUserPath,
    /// Interference from cell `i` uses the gain and distance between cell `i`'s
    /// active uploader and antenna `i`.
    UploaderPath,
}

/// Physical constants of the single-site, multi-sector network.
///
/// Powers, gains and the noise floor are linear; angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub num_users: usize,
    pub num_cells: usize,
    pub bs_power: f64,
    pub user_power: f64,
    pub user_gain: f64,
    pub shadowing: f64,
    pub uplink_shadowing: f64,
    pub path_constant: f64,
    pub path_exponent: f64,
    pub noise: f64,
    pub bandwidth: f64,
    pub vertical_beamwidth: f64,
    pub horizontal_beamwidth: f64,
    pub beam_weight_vertical: f64,
    pub beam_weight_horizontal: f64,
    pub azimuths: Vec<f64>,
    pub bs_height: f64,
    pub coverage_radius: f64,
    pub step_len: f64,
    pub tilt_min: f64,
    pub tilt_max: f64,
    pub slots_per_action: usize,
    pub payload: f64,
    pub delay_budget: f64,
    pub move_probs: MoveProbs,
    pub uplink_interference: UplinkInterference,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            num_users: 10,
            num_cells: 3,
            bs_power: 1.0,
            user_power: 1.0,
            user_gain: 1.0,
            shadowing: 1.0,
            uplink_shadowing: 1.0,
            path_constant: 1.0,
            path_exponent: 2.0,
            noise: 1e-6,
            bandwidth: 1.0,
            vertical_beamwidth: 30.0,
            horizontal_beamwidth: 120.0,
            beam_weight_vertical: 1.0,
            beam_weight_horizontal: 1.0,
            azimuths: vec![0.0, 120.0, 240.0],
            bs_height: 25.0,
            coverage_radius: 50.0,
            step_len: 1.0,
            tilt_min: 0.0,
            tilt_max: 90.0,
            slots_per_action: 3,
            payload: 1.0,
            delay_budget: 150.0,
            move_probs: MoveProbs::Uniform,
            uplink_interference: UplinkInterference::ServedUserPath,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bs_power", self.bs_power),
            ("user_power", self.user_power),
            ("user_gain", self.user_gain),
            ("shadowing", self.shadowing),
            ("uplink_shadowing", self.uplink_shadowing),
            ("path_constant", self.path_constant),
            ("noise", self.noise),
            ("bandwidth", self.bandwidth),
            ("vertical_beamwidth", self.vertical_beamwidth),
            ("horizontal_beamwidth", self.horizontal_beamwidth),
            ("beam_weight_vertical", self.beam_weight_vertical),
            ("beam_weight_horizontal", self.beam_weight_horizontal),
            ("bs_height", self.bs_height),
            ("coverage_radius", self.coverage_radius),
            ("payload", self.payload),
            ("delay_budget", self.delay_budget),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.num_users == 0 || self.num_cells == 0 || self.slots_per_action == 0 {
            return Err(Error::Config("num_users, num_cells and slots_per_action must be >= 1".into()));
        }
        if !(self.path_exponent >= 0.0) {
            return Err(Error::Config("path_exponent must be >= 0".into()));
        }
        if !(self.step_len >= 0.0) {
            return Err(Error::Config("step_len must be >= 0".into()));
        }
        if !(self.tilt_min < self.tilt_max) {
            return Err(Error::Config("tilt_min must be below tilt_max".into()));
        }
        if self.azimuths.len() != self.num_cells {
            return Err(Error::Config(format!(
                "azimuths has {} entries but num_cells is {}",
                self.azimuths.len(),
                self.num_cells
            )));
        }
        Ok(())
    }

    /// Largest linear path gain any user can see (`d >= bs_height`, boresight).
    pub fn max_path_gain(&self) -> f64 {
        self.user_gain * self.shadowing * self.path_constant * self.bs_height.powf(-self.path_exponent)
    }

    /// Upper bound on a per-transition reward: every user at the best possible SNR in every slot.
    pub fn reward_bound(&self) -> f64 {
        let snr = self.bs_power * self.max_path_gain() / self.noise;
        (self.slots_per_action * self.num_users) as f64 * self.bandwidth * (1.0 + snr).log2()
    }
}
