//! Bounds on a network's output over a box of inputs.
//!
//! [`interval_forward`] is sound interval bound propagation (IBP) in
//! center/radius form. [`SampledInterval`] is the cheaper, unsound alternative
//! that takes the elementwise min/max over a fixed set of perturbed inputs.

use super::mlp::{ForwardTrace, GradientSet, MlpNetwork};
use crate::error::{Error, Result};

/// Elementwise bounds on a policy mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanInterval {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl MeanInterval {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("mean interval", lower.len(), upper.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Contract("mean interval requires lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn point(x: Vec<f64>) -> Self {
        Self {
            lower: x.clone(),
            upper: x,
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

#[derive(Debug, Clone)]
struct LayerBox {
    mid_in: Vec<f64>,
    rad_in: Vec<f64>,
    post_lower: Vec<f64>,
    post_upper: Vec<f64>,
}

/// Intermediate boxes of one interval pass, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct IntervalTrace {
    layers: Vec<LayerBox>,
    output: MeanInterval,
}

impl IntervalTrace {
    pub fn output(&self) -> &MeanInterval {
        &self.output
    }
}

#[inline]
fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn interval_forward(net: &MlpNetwork, x_lower: &[f64], x_upper: &[f64]) -> Result<MeanInterval> {
    Ok(interval_forward_trace(net, x_lower, x_upper)?.output)
}

pub fn interval_forward_trace(net: &MlpNetwork, x_lower: &[f64], x_upper: &[f64]) -> Result<IntervalTrace> {
    let n_in = net.input_dim();
    if x_lower.len() != n_in || x_upper.len() != n_in {
        return Err(Error::dim("interval input", n_in, x_lower.len().min(x_upper.len())));
    }
    if x_lower.iter().zip(x_upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Contract("input box requires lower <= upper".into()));
    }
    let mut mid: Vec<f64> = x_lower.iter().zip(x_upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let mut rad: Vec<f64> = x_lower.iter().zip(x_upper).map(|(l, u)| 0.5 * (u - l)).collect();
    // keep exact inputs when the box is a point
    for ((m, r), (l, u)) in mid.iter_mut().zip(rad.iter_mut()).zip(x_lower.iter().zip(x_upper)) {
        if l == u {
            *m = *l;
            *r = 0.0;
        }
    }

    let mut layers = Vec::with_capacity(net.layers().len());
    let mut output = None;
    for (idx, layer) in net.layers().iter().enumerate() {
        let mut mid_out = vec![0.0; layer.out_dim()];
        layer.affine_into(&mid, &mut mid_out);
        let n = layer.in_dim();
        let rad_out: Vec<f64> = (0..layer.out_dim())
            .map(|o| {
                let row = &layer.weights()[o * n..(o + 1) * n];
                row.iter().zip(&rad).map(|(w, r)| w.abs() * r).sum()
            })
            .collect();
        let pre_lower: Vec<f64> = mid_out.iter().zip(&rad_out).map(|(m, r)| m - r).collect();
        let pre_upper: Vec<f64> = mid_out.iter().zip(&rad_out).map(|(m, r)| m + r).collect();

        if net.is_output_layer(idx) {
            layers.push(LayerBox {
                mid_in: std::mem::take(&mut mid),
                rad_in: std::mem::take(&mut rad),
                post_lower: Vec::new(),
                post_upper: Vec::new(),
            });
            output = Some(MeanInterval {
                lower: pre_lower,
                upper: pre_upper,
            });
        } else {
            // tanh is monotone, so the endpoints map to endpoints
            let post_lower: Vec<f64> = pre_lower.iter().map(|v| v.tanh()).collect();
            let post_upper: Vec<f64> = pre_upper.iter().map(|v| v.tanh()).collect();
            let next_mid = post_lower.iter().zip(&post_upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let next_rad = post_lower.iter().zip(&post_upper).map(|(l, u)| 0.5 * (u - l)).collect();
            layers.push(LayerBox {
                mid_in: std::mem::replace(&mut mid, next_mid),
                rad_in: std::mem::replace(&mut rad, next_rad),
                post_lower,
                post_upper,
            });
        }
    }
    Ok(IntervalTrace {
        layers,
        output: output.expect("network has an output layer"),
    })
}

/// Adds `scale * dJ/dθ` into `grads`, where `d_lower`/`d_upper` are `dJ` with
/// respect to the output bounds of the traced interval pass.
pub fn interval_backward(
    net: &MlpNetwork,
    trace: &IntervalTrace,
    d_lower: &[f64],
    d_upper: &[f64],
    scale: f64,
    grads: &mut GradientSet,
) -> Result<()> {
    let k = net.output_dim();
    if d_lower.len() != k || d_upper.len() != k {
        return Err(Error::dim("interval upstream", k, d_lower.len().min(d_upper.len())));
    }
    let mut g_lo: Vec<f64> = d_lower.iter().map(|g| g * scale).collect();
    let mut g_hi: Vec<f64> = d_upper.iter().map(|g| g * scale).collect();
    for idx in (0..net.layers().len()).rev() {
        let layer = &net.layers()[idx];
        let lb = &trace.layers[idx];
        let n = layer.in_dim();
        let d_mid: Vec<f64> = g_lo.iter().zip(&g_hi).map(|(l, h)| l + h).collect();
        let d_rad: Vec<f64> = g_lo.iter().zip(&g_hi).map(|(l, h)| h - l).collect();
        let g = &mut grads.layers[idx];
        for o in 0..layer.out_dim() {
            g.bias[o] += d_mid[o];
            if d_mid[o] == 0.0 && d_rad[o] == 0.0 {
                continue;
            }
            let row = &layer.weights()[o * n..(o + 1) * n];
            let grow = &mut g.weights[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += d_mid[o] * lb.mid_in[i] + d_rad[o] * sign(row[i]) * lb.rad_in[i];
            }
        }
        if idx == 0 {
            break;
        }
        let mut dm_in = vec![0.0; n];
        let mut dr_in = vec![0.0; n];
        for o in 0..layer.out_dim() {
            let row = &layer.weights()[o * n..(o + 1) * n];
            for i in 0..n {
                dm_in[i] += row[i] * d_mid[o];
                dr_in[i] += row[i].abs() * d_rad[o];
            }
        }
        // back through mid = (hi + lo)/2, rad = (hi - lo)/2 and the tanh of the previous layer
        let prev = &trace.layers[idx - 1];
        g_lo = (0..n)
            .map(|i| 0.5 * (dm_in[i] - dr_in[i]) * (1.0 - prev.post_lower[i] * prev.post_lower[i]))
            .collect();
        g_hi = (0..n)
            .map(|i| 0.5 * (dm_in[i] + dr_in[i]) * (1.0 - prev.post_upper[i] * prev.post_upper[i]))
            .collect();
    }
    Ok(())
}

/// Min/max of the network output over a fixed set of perturbed inputs.
#[derive(Debug, Clone)]
pub struct SampledInterval {
    traces: Vec<ForwardTrace>,
    argmin: Vec<usize>,
    argmax: Vec<usize>,
    output: MeanInterval,
}

impl SampledInterval {
    /// `offsets` are perturbations added to `center`; an empty set degenerates to the
    /// point interval at `center`.
    pub fn evaluate(net: &MlpNetwork, center: &[f64], offsets: &[Vec<f64>]) -> Result<Self> {
        let mut traces = vec![net.forward_trace(center)?];
        for off in offsets {
            if off.len() != center.len() {
                return Err(Error::dim("sampled perturbation", center.len(), off.len()));
            }
            let x: Vec<f64> = center.iter().zip(off).map(|(c, o)| c + o).collect();
            traces.push(net.forward_trace(&x)?);
        }
        let k = net.output_dim();
        let mut argmin = vec![0; k];
        let mut argmax = vec![0; k];
        let mut lower = traces[0].output().to_vec();
        let mut upper = lower.clone();
        for (s, t) in traces.iter().enumerate().skip(1) {
            for i in 0..k {
                let v = t.output()[i];
                if v < lower[i] {
                    lower[i] = v;
                    argmin[i] = s;
                }
                if v > upper[i] {
                    upper[i] = v;
                    argmax[i] = s;
                }
            }
        }
        Ok(Self {
            traces,
            argmin,
            argmax,
            output: MeanInterval { lower, upper },
        })
    }

    pub fn output(&self) -> &MeanInterval {
        &self.output
    }

    pub fn backward(
        &self,
        net: &MlpNetwork,
        d_lower: &[f64],
        d_upper: &[f64],
        scale: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        let k = net.output_dim();
        let mut upstream = vec![vec![0.0; k]; self.traces.len()];
        for i in 0..k {
            upstream[self.argmin[i]][i] += d_lower[i];
            upstream[self.argmax[i]][i] += d_upper[i];
        }
        for (trace, up) in self.traces.iter().zip(&upstream) {
            if up.iter().any(|v| *v != 0.0) {
                net.accumulate_backward(trace, up, scale, grads)?;
            }
        }
        Ok(())
    }
}
