//! Diagonal Gaussian densities, Mahalanobis extrema over a box of means, and
//! the Gaussian policy head used by both learners.

use rand::Rng;
use rand_distr::StandardNormal;

use super::interval::MeanInterval;
use super::mlp::{MlpNetwork, Parameters};
use crate::error::{Error, Result};

/// `ln(2π)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `(a - mean)^T Σ^{-1} (a - mean)` with `Σ = diag(exp(2 log_std))`.
pub fn mahalanobis(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((ai, mi), ls)| {
            let z = (ai - mi) / ls.exp();
            z * z
        })
        .sum()
}

/// Log of `exp(-d/2) / ((2π)^{k/2} (det Σ)^{1/2})` for a diagonal `Σ`.
pub fn log_density_from_mahalanobis(d: f64, log_std: &[f64]) -> f64 {
    let k = log_std.len() as f64;
    -0.5 * d - log_std.iter().sum::<f64>() - 0.5 * k * LN_2PI
}

pub fn density_from_mahalanobis(d: f64, log_std: &[f64]) -> f64 {
    log_density_from_mahalanobis(d, log_std).exp()
}

/// Log-density of `a` under `N(mean, diag(exp(2 log_std)))`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    log_density_from_mahalanobis(mahalanobis(a, mean, log_std), log_std)
}

/// Value and gradients `(d/d mean, d/d log_std)` of [`gaussian_log_density`].
pub fn gaussian_log_density_grad(mean: &[f64], log_std: &[f64], a: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let k = mean.len();
    let mut d_mean = vec![0.0; k];
    let mut d_log_std = vec![0.0; k];
    let mut d = 0.0;
    for i in 0..k {
        let sigma = log_std[i].exp();
        let z = (a[i] - mean[i]) / sigma;
        d += z * z;
        d_mean[i] = z / sigma;
        d_log_std[i] = z * z - 1.0;
    }
    (log_density_from_mahalanobis(d, log_std), d_mean, d_log_std)
}

/// Which end of a coordinate's mean interval realizes an extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Lower,
    Upper,
    /// The action lies inside the interval; the minimum contribution is zero.
    Inside,
}

/// Per-coordinate choice of the mean that attains the extremal distance.
pub fn farthest_endpoint(a: f64, lower: f64, upper: f64) -> Endpoint {
    // ties go to the lower endpoint
    if (a - lower).abs() >= (a - upper).abs() {
        Endpoint::Lower
    } else {
        Endpoint::Upper
    }
}

pub fn nearest_endpoint(a: f64, lower: f64, upper: f64) -> Endpoint {
    if a < lower {
        Endpoint::Lower
    } else if a > upper {
        Endpoint::Upper
    } else {
        Endpoint::Inside
    }
}

fn endpoint_offset(a: f64, lower: f64, upper: f64, e: Endpoint) -> f64 {
    match e {
        Endpoint::Lower => a - lower,
        Endpoint::Upper => a - upper,
        Endpoint::Inside => 0.0,
    }
}

/// Minimum and maximum Mahalanobis distance between `a` and any mean in `interval`.
///
/// With a diagonal covariance the problem separates per coordinate: the maximum
/// sits at the farther endpoint, the minimum at the nearer one (or is zero when
/// `a` is inside).
pub fn mahalanobis_extrema(a: &[f64], interval: &MeanInterval, log_std: &[f64]) -> Result<(f64, f64)> {
    let k = a.len();
    if interval.dim() != k || log_std.len() != k {
        return Err(Error::dim("mahalanobis extrema", k, interval.dim().min(log_std.len())));
    }
    let (mut d_lo, mut d_hi) = (0.0, 0.0);
    for i in 0..k {
        let (l, u) = (interval.lower()[i], interval.upper()[i]);
        let sigma = log_std[i].exp();
        let near = endpoint_offset(a[i], l, u, nearest_endpoint(a[i], l, u)) / sigma;
        let far = endpoint_offset(a[i], l, u, farthest_endpoint(a[i], l, u)) / sigma;
        d_lo += near * near;
        d_hi += far * far;
    }
    Ok((d_lo, d_hi))
}

/// Gradient of a worst-case log-density with respect to the interval bounds and `log_std`.
#[derive(Debug, Clone)]
pub struct WorstCaseGrad {
    pub log_density: f64,
    pub d_lower: Vec<f64>,
    pub d_upper: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

/// Log of the worst-case density: with `use_max_distance` the pessimistic
/// lower-bound density (largest distance), otherwise the upper-bound density.
pub fn worst_case_log_density_grad(
    a: &[f64],
    interval: &MeanInterval,
    log_std: &[f64],
    use_max_distance: bool,
) -> WorstCaseGrad {
    let k = a.len();
    let mut d_lower = vec![0.0; k];
    let mut d_upper = vec![0.0; k];
    let mut d_log_std = vec![0.0; k];
    let mut d = 0.0;
    for i in 0..k {
        let (l, u) = (interval.lower()[i], interval.upper()[i]);
        let e = if use_max_distance {
            farthest_endpoint(a[i], l, u)
        } else {
            nearest_endpoint(a[i], l, u)
        };
        // same operation order as `mahalanobis`, so a point interval reproduces it bit for bit
        let sigma = log_std[i].exp();
        let z = endpoint_offset(a[i], l, u, e) / sigma;
        let contrib = z * z;
        d += contrib;
        // d(-d/2)/d(endpoint) = (a - endpoint) / sigma^2
        match e {
            Endpoint::Lower => d_lower[i] = z / sigma,
            Endpoint::Upper => d_upper[i] = z / sigma,
            Endpoint::Inside => {}
        }
        d_log_std[i] = contrib - 1.0;
    }
    WorstCaseGrad {
        log_density: log_density_from_mahalanobis(d, log_std),
        d_lower,
        d_upper,
        d_log_std,
    }
}

/// Gaussian policy: network mean with a state-independent learned `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: MlpNetwork,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean_net: MlpNetwork, log_std: Vec<f64>) -> Result<Self> {
        if log_std.len() != mean_net.output_dim() {
            return Err(Error::dim("policy log_std", mean_net.output_dim(), log_std.len()));
        }
        if log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("log_std must be finite".into()));
        }
        Ok(Self { mean_net, log_std })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(state)
    }

    pub fn log_density(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean(state)?;
        Ok(gaussian_log_density(&mean, &self.log_std, action))
    }

    /// Unclamped Gaussian draw around the mean for `state`.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.mean(state)?;
        Ok(mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

impl Parameters for GaussianPolicy {
    fn param_arrays(&self) -> Vec<&[f64]> {
        let mut v = self.mean_net.param_arrays();
        v.push(&self.log_std);
        v
    }

    fn param_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.mean_net.param_arrays_mut();
        v.push(&mut self.log_std);
        v
    }
}
