//! Link budgets, delay and twin noise against independently written formulas.

use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinrl_core::network::{
    associate, initial_users, radio, NetworkParams, Position, TiltVector, UplinkInterference,
};
use twinrl_core::ratio::{delay_penalty, meta_reward};
use twinrl_core::twin::noisy_positions;

struct Oracle<'a> {
    p: &'a NetworkParams,
}

impl Oracle<'_> {
    fn angles(&self, pos: Position) -> (f64, f64, f64) {
        let r = (pos[0] * pos[0] + pos[1] * pos[1]).sqrt();
        let d = (r * r + self.p.bs_height * self.p.bs_height).sqrt();
        let v = if r == 0.0 { 90.0 } else { (self.p.bs_height / r).atan().to_degrees() };
        let mut h = pos[1].atan2(pos[0]).to_degrees();
        if h < 0.0 {
            h += 360.0;
        }
        (d, v, h)
    }

    fn cell(&self, pos: Position) -> usize {
        let (_, _, h) = self.angles(pos);
        let mut best = (f64::INFINITY, 0);
        for (c, az) in self.p.azimuths.iter().enumerate() {
            let mut diff = (h - az).abs() % 360.0;
            if diff > 180.0 {
                diff = 360.0 - diff;
            }
            if diff < best.0 {
                best = (diff, c);
            }
        }
        best.1
    }

    fn gain(&self, pos: Position, tilt: f64, az: f64) -> f64 {
        let (_, v, h) = self.angles(pos);
        let mut dh = h - az;
        while dh > 180.0 {
            dh -= 360.0;
        }
        while dh <= -180.0 {
            dh += 360.0;
        }
        let a = (v - tilt) / self.p.vertical_beamwidth;
        let b = dh / self.p.horizontal_beamwidth;
        10f64.powf(-1.2 * (self.p.beam_weight_vertical * a * a + self.p.beam_weight_horizontal * b * b))
    }

    fn path(&self, pos: Position) -> f64 {
        let (d, _, _) = self.angles(pos);
        self.p.user_gain * self.p.path_constant / d.powf(self.p.path_exponent)
    }

    fn downlink(&self, pos: Position, tilts: &[f64]) -> f64 {
        let c = self.cell(pos);
        let mut terms = Vec::new();
        for i in 0..self.p.num_cells {
            terms.push(self.p.bs_power * self.p.shadowing * self.gain(pos, tilts[i], self.p.azimuths[i]) * self.path(pos));
        }
        let interference: f64 = (0..self.p.num_cells).filter(|&i| i != c).map(|i| terms[i]).sum();
        terms[c] / (self.p.noise + interference)
    }

    fn uploaders(&self, positions: &[Position], slot: u64) -> Vec<Option<usize>> {
        (0..self.p.num_cells)
            .map(|c| {
                let members: Vec<usize> = (0..positions.len()).filter(|&u| self.cell(positions[u]) == c).collect();
                if members.is_empty() {
                    None
                } else {
                    Some(members[slot as usize % members.len()])
                }
            })
            .collect()
    }

    fn uplink(&self, u: usize, positions: &[Position], tilts: &[f64], up: &[Option<usize>]) -> f64 {
        let pos = positions[u];
        let c = self.cell(pos);
        let k = self.p.user_power * self.p.uplink_shadowing;
        let signal = k * self.gain(pos, tilts[c], self.p.azimuths[c]) * self.path(pos);
        let mut interference = 0.0;
        for i in 0..self.p.num_cells {
            if i == c {
                continue;
            }
            if let Some(v) = up[i] {
                let who = match self.p.uplink_interference {
                    UplinkInterference::ServedUserPath => pos,
                    UplinkInterference::UploaderPath => positions[v],
                };
                interference += k * self.gain(who, tilts[i], self.p.azimuths[i]) * self.path(who);
            }
        }
        signal / (self.p.noise + interference)
    }

    fn delay(&self, slots: &[Vec<Position>], first: u64, tilts: &[f64]) -> f64 {
        let mut total = 0.0;
        for (n, positions) in slots.iter().enumerate() {
            let up = self.uploaders(positions, first + n as u64);
            let mut worst: f64 = 0.0;
            for u in 0..positions.len() {
                let r = self.p.bandwidth * (1.0 + self.uplink(u, positions, tilts, &up)).log2();
                worst = worst.max(self.p.payload / r);
            }
            total += worst;
        }
        total
    }
}

fn random_positions(p: &NetworkParams, rng: &mut ChaCha8Rng) -> Vec<Position> {
    initial_users(p, rng).into_iter().map(|u| u.position).collect()
}

fn random_tilts(p: &NetworkParams, rng: &mut ChaCha8Rng) -> TiltVector {
    TiltVector::new((0..p.num_cells).map(|_| rng.random_range(0.0..90.0)).collect(), p).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

#[test]
pub fn downlink_matches_oracle() {
    let p = NetworkParams::default();
    let o = Oracle { p: &p };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let pos = random_positions(&p, &mut rng);
        let tilts = random_tilts(&p, &mut rng);
        for u in 0..pos.len() {
            let got = radio::downlink_sinr(u, &pos, &tilts, &p);
            assert!(close(got, o.downlink(pos[u], tilts.as_slice())), "{got}");
        }
        let oracle_sum: f64 = pos
            .iter()
            .map(|x| p.bandwidth * (1.0 + o.downlink(*x, tilts.as_slice())).log2())
            .sum();
        assert!(close(radio::slot_sum_rate(&pos, &tilts, &p), oracle_sum));
    }
}

#[test]
pub fn uplink_and_delay_match_oracle_under_both_readings() {
    for mode in [UplinkInterference::ServedUserPath, UplinkInterference::UploaderPath] {
        let p = NetworkParams { uplink_interference: mode, ..NetworkParams::default() };
        let o = Oracle { p: &p };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..30u64 {
            let slots: Vec<Vec<Position>> = (0..3).map(|_| random_positions(&p, &mut rng)).collect();
            let tilts = random_tilts(&p, &mut rng);
            let up = radio::round_robin_uploaders(&slots[0], trial, &p);
            assert_eq!(up, o.uploaders(&slots[0], trial));
            for u in 0..slots[0].len() {
                let got = radio::uplink_sinr(u, &slots[0], &tilts, &up, &p);
                assert!(close(got, o.uplink(u, &slots[0], tilts.as_slice(), &up)));
            }
            let got = radio::transition_delay(&slots, trial, &tilts, &p);
            assert!(close(got, o.delay(&slots, trial, tilts.as_slice())), "{got}");
        }
    }
}

#[test]
pub fn association_sweep_splits_evenly() {
    let p = NetworkParams::default();
    let o = Oracle { p: &p };
    let mut counts = [0usize; 3];
    for k in 0..360 {
        let b = (k as f64 + 0.5).to_radians();
        let pos = [20.0 * b.cos(), 20.0 * b.sin()];
        let c = associate(pos, &p);
        assert_eq!(c, o.cell(pos));
        counts[c] += 1;
    }
    assert_eq!(counts, [120, 120, 120]);
}

#[test]
pub fn rewards_never_exceed_the_bound() {
    let p = NetworkParams::default();
    let bound = p.reward_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let slots: Vec<Vec<Position>> = (0..p.slots_per_action).map(|_| random_positions(&p, &mut rng)).collect();
        let tilts = random_tilts(&p, &mut rng);
        let r = radio::sum_rate(&slots, &tilts, &p);
        assert!(r >= 0.0 && r <= bound);
    }
}

#[test]
pub fn twin_noise_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 0.25;
    let x = vec![3.0; 200_000];
    let noisy = noisy_positions(&x, eps, &mut rng);
    let errs: Vec<f64> = noisy.iter().zip(&x).map(|(a, b)| a - b).collect();
    assert!(errs.iter().all(|e| e.abs() <= eps));
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    // uniform on [-ε, ε]: mean 0, variance ε²/3
    assert!(mean.abs() < 4.0 * (eps * eps / 3.0 / n).sqrt());
    assert!((var - eps * eps / 3.0).abs() < 0.01 * eps * eps / 3.0);
}

#[test]
pub fn penalty_is_piecewise_linear() {
    let strategy = (0.0f64..1e4, 0.0f64..100.0, 0.0f64..1.0, 0.0f64..500.0, -10.0f64..100.0);
    let mut runner = TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strategy, |(tau, dt, xi, budget, reward)| {
            let p0 = delay_penalty(tau, xi, budget);
            if tau <= budget {
                prop_assert_eq!(p0, 0.0);
            } else {
                prop_assert!((p0 - xi * (tau - budget)).abs() <= 1e-9 * (1.0 + p0));
                // slope ξ above the budget
                let p1 = delay_penalty(tau + dt, xi, budget);
                prop_assert!((p1 - p0 - xi * dt).abs() <= 1e-9 * (1.0 + p1));
            }
            prop_assert!(p0 >= 0.0);
            prop_assert_eq!(meta_reward(reward, tau, xi, budget), reward - p0);
            Ok(())
        })
        .unwrap();
}
