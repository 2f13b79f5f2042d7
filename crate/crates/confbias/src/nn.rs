//! Minimal dense network with reverse-mode gradients and Adam.
//!
//! Everything is `f64` and allocation is explicit; the networks here are small
//! enough that clarity beats cleverness. Hidden layers share one activation,
//! the final layer is always affine.

use crate::error::{Error, Result};
use crate::seed::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x * sigmoid(x)`, smooth and non-saturating; the default for score nets.
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer; weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Fully connected network: affine layers with a shared hidden activation,
/// affine final layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-parameter quantities with the same shape as an [`Mlp`]: gradients and
/// Adam moments both use it.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        ParamGrads {
            layers: m
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            for x in l.weights.iter_mut() {
                *x *= s;
            }
            for x in l.bias.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

fn validate_layout(layout: &[usize]) -> Result<()> {
    if layout.len() < 2 {
        return Err(Error::Config(format!(
            "layout needs at least input and output dims, got {layout:?}"
        )));
    }
    if layout.contains(&0) {
        return Err(Error::Config(format!(
            "layout dimensions must be positive, got {layout:?}"
        )));
    }
    Ok(())
}

/// Builds a seeded network. Hidden weights are drawn from a zero-mean normal
/// with scale `1/sqrt(fan_in)`, hidden biases are zero, and the final layer is
/// all zeros so a fresh network is exactly the zero function.
pub fn mlp_init(layout: &[usize], activation: Activation, seed: u64) -> Result<Mlp> {
    validate_layout(layout)?;
    let mut rng = rng_from(seed);
    let n_layers = layout.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (layout[l], layout[l + 1]);
        let mut layer = Layer::zeros(fan_in, fan_out);
        if l + 1 < n_layers {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for w in layer.weights.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        }
        layers.push(layer);
    }
    Ok(Mlp {
        layers,
        activation,
    })
}

impl Mlp {
    /// Rebuilds a network from explicit layers, validating the dimension chain.
    pub fn from_parts(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape(format!(
                    "layer {i} buffers do not match dims {}x{}",
                    l.out_dim, l.in_dim
                )));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} input dim {} does not chain from previous output {}",
                    l.in_dim,
                    layers[i - 1].out_dim
                )));
            }
        }
        Ok(Mlp {
            layers,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layout(&self) -> Vec<usize> {
        let mut l = vec![self.input_dim()];
        l.extend(self.layers.iter().map(|x| x.out_dim));
        l
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Redraws every parameter (final layer included) from the fan-in-scaled
    /// normal. Test fixtures use this where a zero final layer would make
    /// gradients degenerate.
    pub fn randomize_params(&mut self, seed: u64) {
        let mut rng = rng_from(seed);
        for layer in self.layers.iter_mut() {
            let scale = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.weights.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
            for b in layer.bias.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *b = 0.1 * z;
            }
        }
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l < last {
                for v in next.iter_mut() {
                    *v = self.activation.value(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping pre-activations and layer inputs for backprop.
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            layer.apply(&cur, &mut next);
            preacts.push(next.clone());
            if l < last {
                for v in next.iter_mut() {
                    *v = self.activation.value(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (inputs, preacts, cur)
    }

    /// Reverse-mode gradients of `<upstream, forward(x)>` with respect to all
    /// parameters and to the input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream length {} does not match network output dim {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let (inputs, preacts, _) = self.forward_cached(x);
        let mut grads = ParamGrads::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l < last {
                for (d, z) in delta.iter_mut().zip(&preacts[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let g = &mut grads.layers[l];
            let a_in = &inputs[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, v) in row.iter_mut().zip(a_in) {
                    *gw = d * v;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }
}

/// Adam moments plus the step counter; hyperparameters are the usual
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &Mlp) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. Rejects non-positive learning rates and
/// non-finite gradients (the latter as a training error carrying the step).
pub fn adam_step(model: &mut Mlp, grads: &ParamGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if grads.layers.len() != model.layers.len() {
        return Err(Error::Shape(
            "gradient layout does not match the model".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Training {
            step: state.step + 1,
            msg: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + state.eps);
        };
        for i in 0..layer.weights.len() {
            update(&mut layer.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

/// Compares analytic parameter gradients of `loss(forward(x))` against central
/// finite differences with step `h`, returning the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-12)`.
///
/// `loss` returns the scalar value and its gradient with respect to the
/// network output.
pub fn grad_check<F>(model: &Mlp, x: &[f64], loss: F, h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "perturbation scale must be > 0, got {h}"
        )));
    }
    let y = model.forward(x)?;
    let (_, dy) = loss(&y);
    if dy.len() != y.len() {
        return Err(Error::Shape(format!(
            "loss gradient length {} does not match output dim {}",
            dy.len(),
            y.len()
        )));
    }
    let (analytic, _) = model.backward(x, &dy)?;
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for li in 0..probe.layers.len() {
        let n_w = probe.layers[li].weights.len();
        let n_b = probe.layers[li].bias.len();
        for idx in 0..n_w + n_b {
            let read = |m: &Mlp| {
                if idx < n_w {
                    m.layers[li].weights[idx]
                } else {
                    m.layers[li].bias[idx - n_w]
                }
            };
            let write = |m: &mut Mlp, v: f64| {
                if idx < n_w {
                    m.layers[li].weights[idx] = v;
                } else {
                    m.layers[li].bias[idx - n_w] = v;
                }
            };
            let orig = read(&probe);
            write(&mut probe, orig + h);
            let (fp, _) = loss(&probe.forward(x)?);
            write(&mut probe, orig - h);
            let (fm, _) = loss(&probe.forward(x)?);
            write(&mut probe, orig);
            let numeric = (fp - fm) / (2.0 * h);
            let a = if idx < n_w {
                analytic.layers[li].weights[idx]
            } else {
                analytic.layers[li].bias[idx - n_w]
            };
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
