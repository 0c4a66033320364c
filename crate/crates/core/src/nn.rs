//! A small convolutional network with explicit backpropagation, enough for
//! the static localizers and the learned frame predictor.
//!
//! Activations are flat `f64` buffers in channel-major (c, h, w) order.
//! Parameters live in `f64` during training and are rounded to `f32` once
//! training ends, which is the precision checkpoints store.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding that keeps the spatial size (odd kernels only).
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        #[serde(default)]
        padding: Padding,
        #[serde(default = "yes")]
        bias: bool,
    },
    MaxPool2x2,
    Relu,
    Tanh,
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(filters: usize, k: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel: (k, k),
            padding: Padding::Valid,
            bias: true,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    /// Output shape for `input`, or an error when the layer does not fit.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |why: &str| Err(Error::Config(format!("{self:?} on {input}: {why}")));
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel: (kh, kw),
                padding,
                ..
            } => {
                if filters == 0 || kh == 0 || kw == 0 {
                    return bad("empty kernel");
                }
                match padding {
                    Padding::Valid if kh > input.h || kw > input.w => bad("kernel larger than input"),
                    Padding::Valid => Ok(Shape::new(filters, input.h - kh + 1, input.w - kw + 1)),
                    Padding::Same if kh % 2 == 0 || kw % 2 == 0 => bad("same padding needs odd kernels"),
                    Padding::Same => Ok(Shape::new(filters, input.h, input.w)),
                }
            }
            LayerSpec::MaxPool2x2 if input.h < 2 || input.w < 2 => bad("input smaller than 2x2"),
            LayerSpec::MaxPool2x2 => Ok(Shape::new(input.c, input.h / 2, input.w / 2)),
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Softmax => Ok(input),
            LayerSpec::Flatten => Ok(Shape::new(input.len(), 1, 1)),
            LayerSpec::Dense { units: 0 } => bad("zero units"),
            LayerSpec::Dense { units } => Ok(Shape::new(units, 1, 1)),
        }
    }

    /// (weight count, bias count) for this layer on `input`.
    fn param_counts(&self, input: Shape) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel: (kh, kw),
                bias,
                ..
            } => (filters * input.c * kh * kw, if bias { filters } else { 0 }),
            LayerSpec::Dense { units } => (units * input.len(), units),
            _ => (0, 0),
        }
    }

    fn fan_in(&self, input: Shape) -> usize {
        match *self {
            LayerSpec::Conv2d { kernel: (kh, kw), .. } => input.c * kh * kw,
            LayerSpec::Dense { .. } => input.len(),
            _ => 0,
        }
    }
}

/// Shapes of every layer boundary, input first.
pub fn shape_chain(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    let mut chain = vec![input];
    for layer in layers {
        let next = layer.output_shape(*chain.last().expect("nonempty"))?;
        chain.push(next);
    }
    Ok(chain)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub input: Shape,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub padding: Padding,
}

impl ConvGeometry {
    fn pad(&self) -> (isize, isize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((self.kernel.0 / 2) as isize, (self.kernel.1 / 2) as isize),
        }
    }

    pub fn output(&self) -> Shape {
        let (kh, kw) = self.kernel;
        match self.padding {
            Padding::Valid => Shape::new(self.filters, self.input.h + 1 - kh, self.input.w + 1 - kw),
            Padding::Same => Shape::new(self.filters, self.input.h, self.input.w),
        }
    }

    /// For each output position along one axis, the range of kernel offsets
    /// that land inside the input.
    fn valid_k(out_pos: usize, pad: isize, k: usize, n: usize) -> (usize, usize) {
        let start = out_pos as isize - pad;
        let lo = (-start).max(0) as usize;
        let hi = ((n as isize - start).min(k as isize)).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Cross-correlation: `out[o,y,x] = b[o] + Σ w[o,i,ky,kx] · in[i, y+ky-p, x+kx-p]`.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weights: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let out_shape = g.output();
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.pad();
    let ih = g.input.h;
    let iw = g.input.w;
    let mut out = vec![0.0; out_shape.len()];
    for o in 0..g.filters {
        let b = bias.map_or(0.0, |b| b[o]);
        let plane = &mut out[o * out_shape.h * out_shape.w..(o + 1) * out_shape.h * out_shape.w];
        plane.iter_mut().for_each(|v| *v = b);
        for i in 0..g.input.c {
            let wbase = (o * g.input.c + i) * kh * kw;
            let ibase = i * ih * iw;
            for y in 0..out_shape.h {
                let (ky0, ky1) = ConvGeometry::valid_k(y, ph, kh, ih);
                for x in 0..out_shape.w {
                    let (kx0, kx1) = ConvGeometry::valid_k(x, pw, kw, iw);
                    let mut acc = 0.0;
                    for ky in ky0..ky1 {
                        let iy = (y as isize + ky as isize - ph) as usize;
                        let row = ibase + iy * iw;
                        let wrow = wbase + ky * kw;
                        for kx in kx0..kx1 {
                            let ix = (x as isize + kx as isize - pw) as usize;
                            acc += weights[wrow + kx] * input[row + ix];
                        }
                    }
                    plane[y * out_shape.w + x] += acc;
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `gw`/`gb` and returns the
/// gradient with respect to the input.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
) -> Vec<f64> {
    let out_shape = g.output();
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.pad();
    let ih = g.input.h;
    let iw = g.input.w;
    let plane_len = out_shape.h * out_shape.w;
    if let Some(gb) = gb {
        for o in 0..g.filters {
            gb[o] += grad_out[o * plane_len..(o + 1) * plane_len].iter().sum::<f64>();
        }
    }
    let mut grad_in = vec![0.0; g.input.len()];
    for o in 0..g.filters {
        for i in 0..g.input.c {
            let wbase = (o * g.input.c + i) * kh * kw;
            let ibase = i * ih * iw;
            for y in 0..out_shape.h {
                let (ky0, ky1) = ConvGeometry::valid_k(y, ph, kh, ih);
                for x in 0..out_shape.w {
                    let go = grad_out[o * plane_len + y * out_shape.w + x];
                    if go == 0.0 {
                        continue;
                    }
                    let (kx0, kx1) = ConvGeometry::valid_k(x, pw, kw, iw);
                    for ky in ky0..ky1 {
                        let iy = (y as isize + ky as isize - ph) as usize;
                        let row = ibase + iy * iw;
                        let wrow = wbase + ky * kw;
                        for kx in kx0..kx1 {
                            let ix = (x as isize + kx as isize - pw) as usize;
                            gw[wrow + kx] += go * input[row + ix];
                            grad_in[row + ix] += go * weights[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n_cells", rename_all = "snake_case")]
pub enum Head {
    Regression2d,
    Classification(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean of squared errors over the output vector.
    Mse,
    /// Negative log-probability of the target class; expects a Softmax
    /// output and a one-hot target.
    CrossEntropy,
}

impl Head {
    pub fn loss(&self) -> Loss {
        match self {
            Head::Regression2d => Loss::Mse,
            Head::Classification(_) => Loss::CrossEntropy,
        }
    }
}

/// Per-layer parameter buffers: weights followed by biases.
pub type Params = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub head: Head,
    pub params: Params,
    chain: Vec<Shape>,
}

/// Intermediate activations kept for the backward pass.
pub struct Trace {
    /// Input of every layer, then the final output.
    pub activations: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<usize>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("nonempty")
    }
}

impl Model {
    /// Builds a model with seeded uniform weights in ±1/√fan_in and zero biases.
    pub fn new(input: Shape, layers: Vec<LayerSpec>, head: Head, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(input, layers, head)?;
        let mut rng = rng::stream(seed, rng::TAG_INIT, 0);
        for (l, layer) in model.layers.iter().enumerate() {
            let (n_w, _) = layer.param_counts(model.chain[l]);
            let s = 1.0 / (layer.fan_in(model.chain[l]).max(1) as f64).sqrt();
            for w in &mut model.params[l][..n_w] {
                *w = rng.random_range(-s..=s);
            }
        }
        Ok(model)
    }

    /// A model with every parameter zero.
    pub fn zeroed(input: Shape, layers: Vec<LayerSpec>, head: Head) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Config("empty model input".into()));
        }
        let chain = shape_chain(input, &layers)?;
        let out = *chain.last().expect("nonempty");
        match head {
            Head::Regression2d if out.len() != 2 => {
                return Err(Error::Config(format!("regression head needs 2 outputs, got {out}")));
            }
            Head::Classification(n) if out.len() != n || layers.last() != Some(&LayerSpec::Softmax) => {
                return Err(Error::Config(format!(
                    "classification head needs {n} softmax outputs, got {out}"
                )));
            }
            _ => {}
        }
        let params = layers
            .iter()
            .zip(&chain)
            .map(|(layer, s)| {
                let (w, b) = layer.param_counts(*s);
                vec![0.0; w + b]
            })
            .collect();
        Ok(Self {
            input,
            layers,
            head,
            params,
            chain,
        })
    }

    pub fn output_shape(&self) -> Shape {
        *self.chain.last().expect("nonempty")
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.chain
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn round_params_to_f32(&mut self) {
        for v in self.params.iter_mut().flatten() {
            *v = *v as f32 as f64;
        }
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.activations.pop().expect("nonempty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input.len() {
            return Err(Error::dims(self.input, format!("{} values", x.len())));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::new();
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("nonempty");
            let s = self.chain[l];
            let p = &self.params[l];
            let out = match *layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    padding,
                    bias,
                } => {
                    let g = ConvGeometry {
                        input: s,
                        filters,
                        kernel,
                        padding,
                    };
                    let (n_w, _) = layer.param_counts(s);
                    conv2d_forward(&g, input, &p[..n_w], bias.then(|| &p[n_w..]))
                }
                LayerSpec::MaxPool2x2 => {
                    let (out, arg) = maxpool_forward(s, input);
                    pool_argmax.push(arg);
                    out
                }
                LayerSpec::Relu => input.iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::Tanh => input.iter().map(|v| v.tanh()).collect(),
                LayerSpec::Flatten => input.clone(),
                LayerSpec::Dense { units } => {
                    let n = input.len();
                    (0..units)
                        .map(|u| {
                            let row = &p[u * n..(u + 1) * n];
                            p[units * n + u] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
                        })
                        .collect()
                }
                LayerSpec::Softmax => softmax(input),
            };
            activations.push(out);
        }
        Ok(Trace {
            activations,
            pool_argmax,
        })
    }

    /// Loss of one sample and the gradient of that loss for every parameter.
    pub fn backward(&self, x: &[f64], target: &[f64]) -> Result<(f64, Params)> {
        let mut grads: Params = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let loss = self.accumulate_gradient(x, target, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &[f64], target: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        loss_value(self.head.loss(), &out, target)
    }

    /// Adds this sample's gradient into `grads` and returns its loss.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], grads: &mut Params) -> Result<f64> {
        let out_len = self.output_shape().len();
        if target.len() != out_len {
            return Err(Error::dims(format!("{out_len} targets"), format!("{}", target.len())));
        }
        let trace = self.forward_trace(x)?;
        let out = trace.output();
        let loss_kind = self.head.loss();
        let loss = loss_value(loss_kind, out, target)?;

        let mut n_layers = self.layers.len();
        let mut grad: Vec<f64> = match loss_kind {
            Loss::Mse => out
                .iter()
                .zip(target)
                .map(|(p, t)| 2.0 * (p - t) / out_len as f64)
                .collect(),
            Loss::CrossEntropy => {
                // Softmax and cross-entropy together: dL/dz = p − y.
                n_layers -= 1;
                out.iter().zip(target).map(|(p, t)| p - t).collect()
            }
        };
        let mut pool_idx = trace.pool_argmax.len();
        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            let s = self.chain[l];
            let input = &trace.activations[l];
            let output = &trace.activations[l + 1];
            let p = &self.params[l];
            let gp = &mut grads[l];
            grad = match layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    padding,
                    bias,
                } => {
                    let g = ConvGeometry {
                        input: s,
                        filters,
                        kernel,
                        padding,
                    };
                    let (n_w, _) = layer.param_counts(s);
                    let (gw, gb) = gp.split_at_mut(n_w);
                    conv2d_backward(&g, input, &p[..n_w], &grad, gw, bias.then_some(gb))
                }
                LayerSpec::MaxPool2x2 => {
                    pool_idx -= 1;
                    let mut gi = vec![0.0; s.len()];
                    for (g, &i) in grad.iter().zip(&trace.pool_argmax[pool_idx]) {
                        gi[i] += g;
                    }
                    gi
                }
                LayerSpec::Relu => grad
                    .iter()
                    .zip(input)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                LayerSpec::Tanh => grad
                    .iter()
                    .zip(output)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
                LayerSpec::Flatten => grad,
                LayerSpec::Dense { units } => {
                    let n = input.len();
                    let mut gi = vec![0.0; n];
                    for u in 0..units {
                        let g = grad[u];
                        gp[units * n + u] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let row = &p[u * n..(u + 1) * n];
                        let grow = &mut gp[u * n..(u + 1) * n];
                        for k in 0..n {
                            grow[k] += g * input[k];
                            gi[k] += g * row[k];
                        }
                    }
                    gi
                }
                LayerSpec::Softmax => {
                    let dot: f64 = grad.iter().zip(output).map(|(g, y)| g * y).sum();
                    grad.iter().zip(output).map(|(g, y)| y * (g - dot)).collect()
                }
            };
        }
        Ok(loss)
    }
}

fn maxpool_forward(s: Shape, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(s.c * oh * ow);
    let mut arg = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = c * s.h * s.w + 2 * y * s.w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = c * s.h * s.w + (2 * y + dy) * s.w + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub fn loss_value(kind: Loss, out: &[f64], target: &[f64]) -> Result<f64> {
    if out.len() != target.len() {
        return Err(Error::dims(format!("{} targets", out.len()), format!("{}", target.len())));
    }
    Ok(match kind {
        Loss::Mse => out.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / out.len() as f64,
        Loss::CrossEntropy => -out
            .iter()
            .zip(target)
            .filter(|(_, t)| **t != 0.0)
            .map(|(p, t)| t * p.max(1e-300).ln())
            .sum::<f64>(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
    },
}

fn beta1() -> f64 {
    0.9
}

fn beta2() -> f64 {
    0.999
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Learning rate multiplier reached by the last epoch (cosine schedule);
    /// 1.0 keeps the rate fixed.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
    /// Reshuffle the sample order every epoch.
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
            final_lr_fraction: 1.0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        if let Optimizer::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config("momentum must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let progress = epoch as f64 / (self.epochs - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

/// Optimizer state over a flat view of some parameter set.
pub struct OptimizerState {
    kind: Optimizer,
    m: Params,
    v: Params,
    t: i32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, like: &Params) -> Self {
        let zeros = || like.iter().map(|p| vec![0.0; p.len()]).collect::<Params>();
        Self {
            kind,
            m: zeros(),
            v: match kind {
                Optimizer::Adam { .. } => zeros(),
                Optimizer::Sgd { .. } => Vec::new(),
            },
            t: 0,
        }
    }

    /// One update with the (already averaged) gradient.
    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    for ((p, g), m) in p.iter_mut().zip(g).zip(m) {
                        *m = momentum * *m + g;
                        *p -= lr * *m;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2 } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m).zip(v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
}

/// Samples per sequential gradient chunk. Chunks run in parallel and are
/// summed in index order, so results do not depend on the thread count.
const CHUNK: usize = 8;

pub(crate) fn batch_gradient<F>(like: &Params, n: usize, sample_grad: F) -> Result<(f64, Params)>
where
    F: Fn(usize, &mut Params) -> Result<f64> + Sync,
{
    let zeros = || like.iter().map(|p| vec![0.0; p.len()]).collect::<Params>();
    let chunks: Vec<(f64, Params)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = zeros();
            let mut loss = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                loss += sample_grad(i, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = zeros();
    let mut loss = 0.0;
    for (l, g) in chunks {
        loss += l;
        for (t, g) in total.iter_mut().zip(g) {
            for (t, g) in t.iter_mut().zip(g) {
                *t += g;
            }
        }
    }
    let scale = 1.0 / n as f64;
    total.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((loss * scale, total))
}

/// Mini-batch training. The sample order is reshuffled every epoch from the
/// config seed; parameters are rounded to `f32` at the end.
pub fn fit(model: &mut Model, inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} inputs, {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut opt = OptimizerState::new(cfg.optimizer, &model.params);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng::stream(cfg.seed, rng::TAG_SHUFFLE, epoch as u64));
        }
        let lr = cfg.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&model.params, batch.len(), |i, g| {
                let k = batch[i];
                model.accumulate_gradient(&inputs[k], &targets[k], g)
            })?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            opt.step(&mut model.params, &grads, lr);
            epoch_loss += loss * batch.len() as f64;
        }
        epoch_loss /= inputs.len() as f64;
        if !epoch_loss.is_finite() || !model.params_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6e}");
        loss_curve.push(epoch_loss);
    }
    model.round_params_to_f32();
    let mut final_loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        final_loss += model.loss(x, t)?;
    }
    final_loss /= inputs.len() as f64;
    if !final_loss.is_finite() {
        return Err(Error::DivergedLoss { epoch: cfg.epochs });
    }
    Ok(TrainReport { loss_curve, final_loss })
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Header of a checkpoint file. `blobs` lists the parameter buffer lengths
/// in the order they follow the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub blobs: Vec<usize>,
    pub meta: serde_json::Value,
}

/// Writes magic, version, header length (u32), the JSON header and then
/// every blob as little-endian `f32`.
pub fn write_checkpoint<W: Write>(mut w: W, kind: &str, meta: serde_json::Value, blobs: &[Vec<f64>]) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        blobs: blobs.iter().map(Vec::len).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for v in blobs.iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TruncatedFile(what.to_string()),
        _ => Error::Io(e),
    })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let mut b2 = [0u8; 2];
    read_exact_or_truncated(&mut r, &mut b2, "checkpoint version")?;
    let version = u16::from_le_bytes(b2);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut b4 = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut b4, "checkpoint header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(b4) as usize];
    read_exact_or_truncated(&mut r, &mut json, "checkpoint header")?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let mut blobs = Vec::with_capacity(header.blobs.len());
    for &n in &header.blobs {
        let mut bytes = vec![0u8; 4 * n];
        read_exact_or_truncated(&mut r, &mut bytes, "checkpoint parameters")?;
        blobs.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        );
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((header, blobs))
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    input: Shape,
    layers: Vec<LayerSpec>,
    head: Head,
}

impl Model {
    /// Architecture description for a checkpoint header.
    pub fn architecture(&self) -> serde_json::Value {
        serde_json::to_value(ModelMeta {
            input: self.input,
            layers: self.layers.clone(),
            head: self.head,
        })
        .expect("serializable")
    }

    pub fn from_architecture(arch: &serde_json::Value, params: Params) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(arch.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let mut model = Self::zeroed(meta.input, meta.layers, meta.head)?;
        if params.len() != model.params.len() || params.iter().zip(&model.params).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Format("checkpoint parameters do not match architecture".into()));
        }
        model.params = params;
        if !model.params_finite() {
            return Err(Error::Format("non-finite checkpoint parameters".into()));
        }
        Ok(model)
    }
}
