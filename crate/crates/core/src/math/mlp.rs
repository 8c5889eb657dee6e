//! Fully connected networks with tanh hidden layers, an identity output layer,
//! and exact reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One dense layer. Weights are stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("dense layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dim("dense weights", in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::dim("dense bias", out_dim, bias.len()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("dense layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub(crate) fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_v = acc;
        }
    }
}

/// Gradient arrays matching an [`MlpNetwork`] (plus an optional `log_std` block).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GradientSet {
    /// Zero gradient shaped like `net`, with `log_std_len` extra entries.
    pub fn zeros_for(net: &MlpNetwork, log_std_len: usize) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            log_std: vec![0.0; log_std_len],
        }
    }

    /// Arrays in canonical parameter order: per layer weights then bias, then `log_std`.
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        if !self.log_std.is_empty() {
            out.push(&self.log_std);
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        if !self.log_std.is_empty() {
            out.push(&mut self.log_std);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for arr in self.arrays_mut() {
            arr.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &GradientSet, factor: f64) -> Result<()> {
        let theirs = other.arrays();
        let mut mine = self.arrays_mut();
        if mine.len() != theirs.len() {
            return Err(Error::dim("gradient arrays", mine.len(), theirs.len()));
        }
        for (m, t) in mine.iter_mut().zip(theirs) {
            if m.len() != t.len() {
                return Err(Error::dim("gradient array", m.len(), t.len()));
            }
            for (a, b) in m.iter_mut().zip(t) {
                *a += factor * b;
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.arrays()
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn num_entries(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

/// Anything whose trainable parameters can be listed in canonical order.
pub trait Parameters {
    fn param_arrays(&self) -> Vec<&[f64]>;
    fn param_arrays_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Fully connected network: tanh on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

impl MlpNetwork {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim("layer chaining", pair[0].out_dim, pair[1].in_dim));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with layer widths `sizes` (input width first).
    ///
    /// Hidden weights are drawn from `N(0, 1/fan_in)`; the output layer is further
    /// multiplied by `output_gain`. Biases start at zero.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("network needs an input and an output width".into()));
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l + 1 == n { output_gain } else { 1.0 };
            let std = gain / (fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(Dense::new(fan_in, fan_out, weights, vec![0.0; fan_out])?);
        }
        Self::new(layers)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("network needs an input and an output width".into()));
        }
        Self::new(sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Layer widths, input width first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub(crate) fn is_output_layer(&self, idx: usize) -> bool {
        idx + 1 == self.layers.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            next.resize(layer.out_dim, 0.0);
            layer.affine_into(&cur, &mut next);
            if !self.is_output_layer(idx) {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            layer.affine_into(activations.last().unwrap(), &mut out);
            if !self.is_output_layer(idx) {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Gradients of `<upstream, forward(x)>` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let trace = self.forward_trace(x)?;
        let mut grads = GradientSet::zeros_for(self, 0);
        self.accumulate_backward(&trace, upstream, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale * d<upstream, output>/dθ` into `grads`.
    pub fn accumulate_backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        scale: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim("upstream gradient", self.output_dim(), upstream.len()));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("gradient layers", self.layers.len(), grads.layers.len()));
        }
        let mut delta: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            if !self.is_output_layer(idx) {
                let out = &trace.activations[idx + 1];
                for (d, a) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.activations[idx];
            let g = &mut grads.layers[idx];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if *d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, xi) in row.iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                }
            }
            if idx > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

impl Parameters for MlpNetwork {
    fn param_arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    fn param_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }
}
