//! Five-move random walk inside the coverage disk.

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};

use super::params::{MoveProbs, NetworkParams};
use super::Position;
use crate::error::{Error, Result};

/// Move order: stay, +y, -y, -x, +x.
pub const MOVES: [[f64; 2]; 5] = [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub position: Position,
    pub move_probs: [f64; 5],
}

impl UserState {
    pub fn new(position: Position, move_probs: [f64; 5]) -> Result<Self> {
        if move_probs.iter().any(|p| !(*p >= 0.0)) || (move_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("move probabilities must be non-negative and sum to 1".into()));
        }
        Ok(Self { position, move_probs })
    }
}

/// Index of the move drawn from `probs`.
pub fn sample_move<R: Rng + ?Sized>(probs: &[f64; 5], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: pick the last move with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Advances every user by one slot. Moves that would leave the coverage disk
/// are rejected and the user stays put.
pub fn step_mobility<R: Rng + ?Sized>(users: &mut [UserState], params: &NetworkParams, rng: &mut R) {
    let r2 = params.coverage_radius * params.coverage_radius;
    for user in users.iter_mut() {
        let m = MOVES[sample_move(&user.move_probs, rng)];
        let next = [
            user.position[0] + params.step_len * m[0],
            user.position[1] + params.step_len * m[1],
        ];
        if next[0] * next[0] + next[1] * next[1] <= r2 {
            user.position = next;
        }
    }
}

/// Users placed uniformly at random in the coverage disk.
pub fn initial_users<R: Rng + ?Sized>(params: &NetworkParams, rng: &mut R) -> Vec<UserState> {
    let dirichlet = Dirichlet::new([1.0; 5]).expect("valid concentration");
    (0..params.num_users)
        .map(|_| {
            let r = params.coverage_radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let move_probs = match params.move_probs {
                MoveProbs::Uniform => [0.2; 5],
                MoveProbs::Dirichlet => dirichlet.sample(rng),
            };
            UserState {
                position: [r * theta.cos(), r * theta.sin()],
                move_probs,
            }
        })
        .collect()
}
