//! Numerical substrate: networks, Gaussian densities, interval bounds, optimizers.

pub mod gaussian;
pub mod interval;
pub mod mlp;
pub mod optim;

pub use gaussian::{
    density_from_mahalanobis, gaussian_log_density, mahalanobis, mahalanobis_extrema, GaussianPolicy,
};
pub use interval::{interval_forward, MeanInterval};
pub use mlp::{Dense, GradientSet, MlpNetwork, Parameters};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
