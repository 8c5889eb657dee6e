//! Parameter updates. Plain gradient descent is the default; Adam is available
//! behind configuration.

use serde::{Deserialize, Serialize};

use super::mlp::{GradientSet, Parameters};
use crate::error::{Error, Result};

fn check_shapes(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("parameter arrays", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::dim("parameter array", p.len(), g.len()));
        }
    }
    Ok(())
}

/// `θ ← θ - lr · ∇L`: one descent step on a minimized loss.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let g = grads.arrays();
    let mut p = params.param_arrays_mut();
    check_shapes(&p, &g)?;
    for (pa, ga) in p.iter_mut().zip(&g) {
        for (v, d) in pa.iter_mut().zip(ga.iter()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let g = grads.arrays();
        let mut p = params.param_arrays_mut();
        check_shapes(&p, &g)?;
        if self.m.is_empty() {
            self.m = g.iter().map(|a| vec![0.0; a.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (a, (pa, ga)) in p.iter_mut().zip(&g).enumerate() {
            for (j, (v, d)) in pa.iter_mut().zip(ga.iter()).enumerate() {
                let m = &mut self.m[a][j];
                let s = &mut self.v[a][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * d;
                *s = self.beta2 * *s + (1.0 - self.beta2) * d * d;
                *v -= lr * (*m / bc1) / ((*s / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Stateful optimizer selected by [`OptimizerKind`].
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::default()),
        }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, grads, lr),
            Optimizer::Adam(adam) => adam.step(params, grads, lr),
        }
    }
}
