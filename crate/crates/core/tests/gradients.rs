//! Finite-difference checks of every analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinrl_core::math::{GaussianPolicy, GradientSet, MlpNetwork, Parameters};
use twinrl_core::ppo::{
    adversarial_loss, policy_loss, surrogate_loss, value_loss, AdvantageNorm, Batch, PpoConfig, Sample,
    WorstCaseMethod,
};

const H: f64 = 1e-6;
const REL: f64 = 1e-3;

fn policy(rng: &mut ChaCha8Rng) -> GaussianPolicy {
    let net = MlpNetwork::random(&[4, 6, 5, 2], 1.0, rng).unwrap();
    let log_std = (0..2).map(|_| rng.random_range(-0.7..0.2)).collect();
    GaussianPolicy::new(net, log_std).unwrap()
}

fn samples(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            terminal: i % 5 == 4,
            noise_radius: if i % 3 == 0 { 0.0 } else { radius },
        })
        .collect()
}

/// Central differences over every parameter in canonical order.
fn numeric<P: Parameters + Clone>(p: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let sizes: Vec<usize> = p.param_arrays().iter().map(|a| a.len()).collect();
    let mut out = Vec::new();
    for (k, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let mut plus = p.clone();
            plus.param_arrays_mut()[k][j] += H;
            let mut minus = p.clone();
            minus.param_arrays_mut()[k][j] -= H;
            out.push((f(&plus) - f(&minus)) / (2.0 * H));
        }
    }
    out
}

fn flat(g: &GradientSet) -> Vec<f64> {
    g.arrays().iter().flat_map(|a| a.iter().copied()).collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len());
    let norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 1e-8, "degenerate gradient");
    let err = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(err <= REL * norm, "relative error {} (norm {norm})", err / norm);
}

/// Snapshot log-densities near the current ones so that most samples sit in
/// the unclipped region and some in the clipped one.
fn batch_parts(policy: &GaussianPolicy, s: &[Sample], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let idx: Vec<usize> = (0..s.len()).collect();
    let adv: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let old: Vec<f64> = s
        .iter()
        .map(|x| policy.log_density(&x.state, &x.action).unwrap() + rng.random_range(-0.4..0.4))
        .collect();
    (idx, adv, old)
}

#[test]
pub fn surrogate_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = policy(&mut rng);
        let s = samples(&mut rng, 12, 0.0);
        let (idx, adv, old) = batch_parts(&p, &s, &mut rng);
        let batch = Batch { samples: &s, indices: &idx, advantages: &adv, old_log_density: &old };
        let analytic = flat(&surrogate_loss(&p, batch, 0.2).unwrap().grads);
        let fd = numeric(&p, |q| surrogate_loss(q, batch, 0.2).unwrap().loss);
        assert_close(&analytic, &fd);
    }
}

#[test]
pub fn adversarial_gradient_matches_finite_differences() {
    for seed in 10..14 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = policy(&mut rng);
        let s = samples(&mut rng, 12, 0.05);
        let (idx, adv, old) = batch_parts(&p, &s, &mut rng);
        let batch = Batch { samples: &s, indices: &idx, advantages: &adv, old_log_density: &old };
        let eval = |q: &GaussianPolicy| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            adversarial_loss(q, batch, 0.2, WorstCaseMethod::Interval, 0, &mut r).unwrap()
        };
        let analytic = flat(&eval(&p).grads);
        let fd = numeric(&p, |q| eval(q).loss);
        assert_close(&analytic, &fd);
    }
}

#[test]
pub fn sampled_adversarial_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = policy(&mut rng);
    let s = samples(&mut rng, 10, 0.05);
    let (idx, adv, old) = batch_parts(&p, &s, &mut rng);
    let batch = Batch { samples: &s, indices: &idx, advantages: &adv, old_log_density: &old };
    // a fixed perturbation draw makes the loss a smooth function of the parameters
    let eval = |q: &GaussianPolicy| {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        adversarial_loss(q, batch, 0.2, WorstCaseMethod::Sampled, 16, &mut r).unwrap()
    };
    assert_close(&flat(&eval(&p).grads), &numeric(&p, |q| eval(q).loss));
}

#[test]
pub fn combined_gradient_matches_finite_differences() {
    for kappa in [0.0, 0.3, 0.5, 1.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = policy(&mut rng);
        let s = samples(&mut rng, 12, 0.05);
        let (idx, adv, old) = batch_parts(&p, &s, &mut rng);
        let batch = Batch { samples: &s, indices: &idx, advantages: &adv, old_log_density: &old };
        let cfg = PpoConfig {
            kappa,
            advantage_norm: AdvantageNorm::None,
            ..PpoConfig::default()
        };
        let eval = |q: &GaussianPolicy| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            policy_loss(q, batch, &cfg, &mut r).unwrap()
        };
        assert_close(&flat(&eval(&p).grads), &numeric(&p, |q| eval(q).loss));
    }
}

#[test]
pub fn value_gradient_matches_finite_differences() {
    for seed in 40..44 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = MlpNetwork::random(&[4, 7, 1], 1.0, &mut rng).unwrap();
        let s = samples(&mut rng, 15, 0.0);
        let idx: Vec<usize> = (0..s.len()).collect();
        let analytic = flat(&value_loss(&v, &s, &idx, 0.9).unwrap().grads);
        let fd = numeric(&v, |q| value_loss(q, &s, &idx, 0.9).unwrap().loss);
        assert_close(&analytic, &fd);
    }
}

#[test]
pub fn surrogate_matches_elementwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let p = policy(&mut rng);
    let s = samples(&mut rng, 20, 0.0);
    let (idx, adv, old) = batch_parts(&p, &s, &mut rng);
    let batch = Batch { samples: &s, indices: &idx, advantages: &adv, old_log_density: &old };
    let eta = 0.2;
    let oracle: f64 = s
        .iter()
        .zip(&adv)
        .zip(&old)
        .map(|((x, a), o)| {
            let r = (p.log_density(&x.state, &x.action).unwrap() - o).exp();
            -f64::min(r * a, r.clamp(1.0 - eta, 1.0 + eta) * a)
        })
        .sum::<f64>()
        / s.len() as f64;
    let got = surrogate_loss(&p, batch, eta).unwrap().loss;
    assert!((got - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()), "{got} vs {oracle}");
}
