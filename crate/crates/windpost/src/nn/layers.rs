//! Layer implementations with explicit forward/backward passes. Each layer
//! owns its parameters, gradient accumulators, and the forward cache the
//! backward pass needs. Parallel loops write disjoint output slices with
//! fixed inner summation order, so results do not depend on thread count.

use super::tensor::Tensor;
use crate::dist::math::{sigmoid, softplus};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Softplus,
    Softmax,
    Linear,
}

/// Descriptor used to build layers and to serialize architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, units: usize },
    /// 3x3 kernel, stride 1, zero "same" padding.
    Conv2D { in_channels: usize, filters: usize },
    /// 2x2 window, stride 2, floor division of odd extents.
    MaxPool,
    BatchNorm { size: usize, momentum: f64, eps: f64 },
    Dropout { rate: f64 },
    Activation(ActivationKind),
    Flatten,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub weights: Vec<f64>, // [units, inputs]
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache_input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2D {
    pub in_channels: usize,
    pub filters: usize,
    pub weights: Vec<f64>, // [filters, in_channels, 3, 3]
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache_input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    cache_argmax: Option<(Vec<usize>, Vec<usize>)>, // (input shape via tensor, argmax flat indices)
    cache_in_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub size: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    cache_mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
    cache: Option<Tensor>, // input for relu/softplus, output for softmax
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flatten {
    cache_in_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2D(Conv2D),
    MaxPool(MaxPool),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Activation(Activation),
    Flatten(Flatten),
    Concat,
}

fn shape_err(layer: &str, message: String) -> Error {
    Error::ShapeError { layer: layer.to_string(), message }
}

impl Layer {
    pub fn build(spec: &LayerSpec, rng: &mut ChaCha12Rng) -> Layer {
        match *spec {
            LayerSpec::Dense { inputs, units } => {
                let a = (6.0 / inputs as f64).sqrt();
                Layer::Dense(Dense {
                    inputs,
                    units,
                    weights: (0..units * inputs).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * a).collect(),
                    bias: vec![0.0; units],
                    grad_weights: vec![0.0; units * inputs],
                    grad_bias: vec![0.0; units],
                    cache_input: None,
                })
            }
            LayerSpec::Conv2D { in_channels, filters } => {
                let fan_in = in_channels * 9;
                let a = (6.0 / fan_in as f64).sqrt();
                Layer::Conv2D(Conv2D {
                    in_channels,
                    filters,
                    weights: (0..filters * in_channels * 9)
                        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * a)
                        .collect(),
                    bias: vec![0.0; filters],
                    grad_weights: vec![0.0; filters * in_channels * 9],
                    grad_bias: vec![0.0; filters],
                    cache_input: None,
                })
            }
            LayerSpec::MaxPool => Layer::MaxPool(MaxPool { cache_argmax: None, cache_in_shape: Vec::new() }),
            LayerSpec::BatchNorm { size, momentum, eps } => Layer::BatchNorm(BatchNorm {
                size,
                momentum,
                eps,
                gamma: vec![1.0; size],
                beta: vec![0.0; size],
                running_mean: vec![0.0; size],
                running_var: vec![1.0; size],
                grad_gamma: vec![0.0; size],
                grad_beta: vec![0.0; size],
                cache: None,
            }),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout { rate, cache_mask: None }),
            LayerSpec::Activation(kind) => Layer::Activation(Activation { kind, cache: None }),
            LayerSpec::Flatten => Layer::Flatten(Flatten { cache_in_shape: Vec::new() }),
            LayerSpec::Concat => Layer::Concat,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs, units: d.units },
            Layer::Conv2D(c) => LayerSpec::Conv2D { in_channels: c.in_channels, filters: c.filters },
            Layer::MaxPool(_) => LayerSpec::MaxPool,
            Layer::BatchNorm(b) => {
                LayerSpec::BatchNorm { size: b.size, momentum: b.momentum, eps: b.eps }
            }
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
            Layer::Activation(a) => LayerSpec::Activation(a.kind),
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Concat => LayerSpec::Concat,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2D(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::Activation(_) => "activation",
            Layer::Flatten(_) => "flatten",
            Layer::Concat => "concat",
        }
    }

    /// Parameter and gradient views, one entry per parameter tensor.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense(d) => vec![
                (&mut d.weights, &mut d.grad_weights),
                (&mut d.bias, &mut d.grad_bias),
            ],
            Layer::Conv2D(c) => vec![
                (&mut c.weights, &mut c.grad_weights),
                (&mut c.bias, &mut c.grad_bias),
            ],
            Layer::BatchNorm(b) => vec![
                (&mut b.gamma, &mut b.grad_gamma),
                (&mut b.beta, &mut b.grad_beta),
            ],
            _ => Vec::new(),
        }
    }

    /// Drop forward caches and transient state.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.cache_input = None,
            Layer::Conv2D(c) => c.cache_input = None,
            Layer::MaxPool(m) => {
                m.cache_argmax = None;
                m.cache_in_shape = Vec::new();
            }
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Dropout(d) => d.cache_mask = None,
            Layer::Activation(a) => a.cache = None,
            Layer::Flatten(f) => f.cache_in_shape = Vec::new(),
            Layer::Concat => {}
        }
    }

    pub fn forward(
        &mut self,
        input: &Tensor,
        mode: Mode,
        rng: &mut ChaCha12Rng,
        name: &str,
    ) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(input, mode, name),
            Layer::Conv2D(c) => c.forward(input, mode, name),
            Layer::MaxPool(m) => m.forward(input, name),
            Layer::BatchNorm(b) => b.forward(input, mode, name),
            Layer::Dropout(dr) => dr.forward(input, mode, rng),
            Layer::Activation(a) => a.forward(input),
            Layer::Flatten(f) => f.forward(input, name),
            Layer::Concat => Err(shape_err(name, "concat is applied at the graph level".into())),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(grad_out, name),
            Layer::Conv2D(c) => c.backward(grad_out, name),
            Layer::MaxPool(m) => m.backward(grad_out, name),
            Layer::BatchNorm(b) => b.backward(grad_out, name),
            Layer::Dropout(dr) => dr.backward(grad_out, name),
            Layer::Activation(a) => a.backward(grad_out, name),
            Layer::Flatten(f) => f.backward(grad_out),
            Layer::Concat => Err(shape_err(name, "concat is applied at the graph level".into())),
        }
    }
}

impl Dense {
    fn forward(&mut self, input: &Tensor, _mode: Mode, name: &str) -> Result<Tensor> {
        if input.shape.len() != 2 || input.shape[1] != self.inputs {
            return Err(shape_err(
                name,
                format!("expected [batch, {}], got {:?}", self.inputs, input.shape),
            ));
        }
        let b = input.batch();
        let (units, inputs) = (self.units, self.inputs);
        let mut out = Tensor::zeros(&[b, units]);
        out.values
            .par_chunks_mut(units)
            .zip(input.values.par_chunks(inputs))
            .for_each(|(orow, xrow)| {
                for (o, ov) in orow.iter_mut().enumerate() {
                    let wrow = &self.weights[o * inputs..(o + 1) * inputs];
                    let mut acc = self.bias[o];
                    for i in 0..inputs {
                        acc += wrow[i] * xrow[i];
                    }
                    *ov = acc;
                }
            });
        self.cache_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        let input = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::StateError(format!("{name}: backward without forward cache")))?;
        let b = input.batch();
        let (units, inputs) = (self.units, self.inputs);
        if grad_out.shape != [b, units] {
            return Err(shape_err(name, format!("gradient shape {:?}", grad_out.shape)));
        }
        // Parameter gradients: each output unit owns one weight row.
        self.grad_weights
            .par_chunks_mut(inputs)
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(o, (wrow, db))| {
                for bi in 0..b {
                    let g = grad_out.values[bi * units + o];
                    if g != 0.0 {
                        let xrow = &input.values[bi * inputs..(bi + 1) * inputs];
                        for i in 0..inputs {
                            wrow[i] += g * xrow[i];
                        }
                    }
                    *db += g;
                }
            });
        let mut grad_in = Tensor::zeros(&[b, inputs]);
        grad_in
            .values
            .par_chunks_mut(inputs)
            .zip(grad_out.values.par_chunks(units))
            .for_each(|(gx, grow)| {
                for (o, &g) in grow.iter().enumerate() {
                    if g != 0.0 {
                        let wrow = &self.weights[o * inputs..(o + 1) * inputs];
                        for i in 0..inputs {
                            gx[i] += g * wrow[i];
                        }
                    }
                }
            });
        Ok(grad_in)
    }
}

impl Conv2D {
    fn forward(&mut self, input: &Tensor, _mode: Mode, name: &str) -> Result<Tensor> {
        if input.shape.len() != 4 || input.shape[1] != self.in_channels {
            return Err(shape_err(
                name,
                format!("expected [batch, {}, h, w], got {:?}", self.in_channels, input.shape),
            ));
        }
        let (b, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
        let f = self.filters;
        let mut out = Tensor::zeros(&[b, f, h, w]);
        let plane = h * w;
        out.values
            .par_chunks_mut(f * plane)
            .zip(input.values.par_chunks(c * plane))
            .for_each(|(oblock, xblock)| {
                for fi in 0..f {
                    let oplane = &mut oblock[fi * plane..(fi + 1) * plane];
                    let bias = self.bias[fi];
                    for v in oplane.iter_mut() {
                        *v = bias;
                    }
                    for ci in 0..c {
                        let xplane = &xblock[ci * plane..(ci + 1) * plane];
                        let kbase = (fi * c + ci) * 9;
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let wk = self.weights[kbase + ky * 3 + kx];
                                if wk == 0.0 {
                                    continue;
                                }
                                let dy = ky as isize - 1;
                                let dx = kx as isize - 1;
                                let y0 = (-dy).max(0) as usize;
                                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = ((w as isize - dx).min(w as isize)) as usize;
                                for y in y0..y1 {
                                    let src = ((y as isize + dy) as usize) * w;
                                    let dst = y * w;
                                    for x in x0..x1 {
                                        oplane[dst + x] +=
                                            wk * xplane[src + (x as isize + dx) as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        self.cache_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        let input = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::StateError(format!("{name}: backward without forward cache")))?;
        let (b, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
        let f = self.filters;
        let plane = h * w;
        if grad_out.shape != [b, f, h, w] {
            return Err(shape_err(name, format!("gradient shape {:?}", grad_out.shape)));
        }

        // dW and db: each filter owns its gradient slice; batches are summed
        // in index order inside the task.
        self.grad_weights
            .par_chunks_mut(c * 9)
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(fi, (wgrad, bgrad))| {
                for bi in 0..b {
                    let gplane = &grad_out.values[(bi * f + fi) * plane..(bi * f + fi + 1) * plane];
                    for g in gplane {
                        *bgrad += *g;
                    }
                    for ci in 0..c {
                        let xplane =
                            &input.values[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let dy = ky as isize - 1;
                                let dx = kx as isize - 1;
                                let y0 = (-dy).max(0) as usize;
                                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = ((w as isize - dx).min(w as isize)) as usize;
                                let mut acc = 0.0;
                                for y in y0..y1 {
                                    let src = ((y as isize + dy) as usize) * w;
                                    let dst = y * w;
                                    for x in x0..x1 {
                                        acc += gplane[dst + x]
                                            * xplane[src + (x as isize + dx) as usize];
                                    }
                                }
                                wgrad[ci * 9 + ky * 3 + kx] += acc;
                            }
                        }
                    }
                }
            });

        // dX: full correlation with flipped kernels; each batch element owns
        // its gradient block.
        let mut grad_in = Tensor::zeros(&[b, c, h, w]);
        grad_in
            .values
            .par_chunks_mut(c * plane)
            .zip(grad_out.values.par_chunks(f * plane))
            .for_each(|(xgrad, gblock)| {
                for ci in 0..c {
                    let xplane = &mut xgrad[ci * plane..(ci + 1) * plane];
                    for fi in 0..f {
                        let gplane = &gblock[fi * plane..(fi + 1) * plane];
                        let kbase = (fi * c + ci) * 9;
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let wk = self.weights[kbase + ky * 3 + kx];
                                if wk == 0.0 {
                                    continue;
                                }
                                // out[y][x] consumed in[y+ky-1][x+kx-1]
                                let dy = ky as isize - 1;
                                let dx = kx as isize - 1;
                                let y0 = (-dy).max(0) as usize;
                                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = ((w as isize - dx).min(w as isize)) as usize;
                                for y in y0..y1 {
                                    let dst = ((y as isize + dy) as usize) * w;
                                    let src = y * w;
                                    for x in x0..x1 {
                                        xplane[dst + (x as isize + dx) as usize] +=
                                            wk * gplane[src + x];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok(grad_in)
    }
}

impl MaxPool {
    fn forward(&mut self, input: &Tensor, name: &str) -> Result<Tensor> {
        if input.shape.len() != 4 {
            return Err(shape_err(name, format!("expected rank-4 input, got {:?}", input.shape)));
        }
        let (b, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
        if h < 2 || w < 2 {
            return Err(shape_err(name, format!("spatial extent {h}x{w} too small to pool")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[b, c, h2, w2]);
        let mut argmax = vec![0usize; b * c * h2 * w2];
        for bc in 0..b * c {
            let xplane = &input.values[bc * h * w..(bc + 1) * h * w];
            let obase = bc * h2 * w2;
            for y in 0..h2 {
                for x in 0..w2 {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (2 * y + dy) * w + 2 * x + dx;
                            if xplane[idx] > best {
                                best = xplane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.values[obase + y * w2 + x] = best;
                    argmax[obase + y * w2 + x] = bc * h * w + best_idx;
                }
            }
        }
        self.cache_argmax = Some((argmax, vec![]));
        self.cache_in_shape = input.shape.clone();
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        let (argmax, _) = self
            .cache_argmax
            .as_ref()
            .ok_or_else(|| Error::StateError(format!("{name}: backward without forward cache")))?;
        let mut grad_in = Tensor::zeros(&self.cache_in_shape);
        for (g, &idx) in grad_out.values.iter().zip(argmax) {
            grad_in.values[idx] += g;
        }
        Ok(grad_in)
    }
}

impl BatchNorm {
    /// Channel count and per-channel element count of a rank-2 or rank-4 input.
    fn layout(&self, input: &Tensor, name: &str) -> Result<(usize, usize)> {
        match input.shape.len() {
            2 => {
                if input.shape[1] != self.size {
                    return Err(shape_err(name, format!("expected {} features", self.size)));
                }
                Ok((self.size, input.shape[0]))
            }
            4 => {
                if input.shape[1] != self.size {
                    return Err(shape_err(name, format!("expected {} channels", self.size)));
                }
                Ok((self.size, input.shape[0] * input.shape[2] * input.shape[3]))
            }
            _ => Err(shape_err(name, format!("unsupported rank {:?}", input.shape))),
        }
    }

    fn channel_of(&self, flat: usize, shape: &[usize]) -> usize {
        if shape.len() == 2 {
            flat % shape[1]
        } else {
            let plane = shape[2] * shape[3];
            (flat / plane) % shape[1]
        }
    }

    fn forward(&mut self, input: &Tensor, mode: Mode, name: &str) -> Result<Tensor> {
        let (channels, per_channel) = self.layout(input, name)?;
        let shape = input.shape.clone();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for (i, &v) in input.values.iter().enumerate() {
                    mean[self.channel_of(i, &shape)] += v;
                }
                for m in &mut mean {
                    *m /= per_channel as f64;
                }
                for (i, &v) in input.values.iter().enumerate() {
                    let c = self.channel_of(i, &shape);
                    var[c] += (v - mean[c]) * (v - mean[c]);
                }
                for v in &mut var {
                    *v /= per_channel as f64;
                }
                for c in 0..channels {
                    self.running_mean[c] =
                        self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean[c];
                    self.running_var[c] =
                        self.momentum * self.running_var[c] + (1.0 - self.momentum) * var[c];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(&shape);
        let mut out = Tensor::zeros(&shape);
        for (i, &v) in input.values.iter().enumerate() {
            let c = self.channel_of(i, &shape);
            let n = (v - mean[c]) * inv_std[c];
            normalized.values[i] = n;
            out.values[i] = self.gamma[c] * n + self.beta[c];
        }
        self.cache = Some(BnCache { normalized, inv_std, mode });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::StateError(format!("{name}: backward without forward cache")))?;
        let shape = cache.normalized.shape.clone();
        let (channels, per_channel) = self.layout(&cache.normalized, name)?;
        let mut sum_g = vec![0.0; channels];
        let mut sum_gx = vec![0.0; channels];
        for (i, &g) in grad_out.values.iter().enumerate() {
            let c = self.channel_of(i, &shape);
            sum_g[c] += g;
            sum_gx[c] += g * cache.normalized.values[i];
        }
        for c in 0..channels {
            self.grad_beta[c] += sum_g[c];
            self.grad_gamma[c] += sum_gx[c];
        }
        let mut grad_in = Tensor::zeros(&shape);
        match cache.mode {
            Mode::Train => {
                let n = per_channel as f64;
                for (i, &g) in grad_out.values.iter().enumerate() {
                    let c = self.channel_of(i, &shape);
                    let xhat = cache.normalized.values[i];
                    grad_in.values[i] = self.gamma[c] * cache.inv_std[c] / n
                        * (n * g - sum_g[c] - xhat * sum_gx[c]);
                }
            }
            Mode::Infer => {
                // Running statistics are constants in inference mode.
                for (i, &g) in grad_out.values.iter().enumerate() {
                    let c = self.channel_of(i, &shape);
                    grad_in.values[i] = g * self.gamma[c] * cache.inv_std[c];
                }
            }
        }
        Ok(grad_in)
    }
}

impl Dropout {
    fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut ChaCha12Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::DomainError(format!("dropout rate {} outside [0,1)", self.rate)));
        }
        if mode == Mode::Infer || self.rate == 0.0 {
            self.cache_mask = None;
            return Ok(input.clone());
        }
        // Inverted dropout: kept activations are scaled by 1/(1-rate).
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..input.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = input.clone();
        for (v, m) in out.values.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.cache_mask = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, _name: &str) -> Result<Tensor> {
        match &self.cache_mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                let mut g = grad_out.clone();
                for (v, m) in g.values.iter_mut().zip(mask) {
                    *v *= m;
                }
                Ok(g)
            }
        }
    }
}

impl Activation {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        match self.kind {
            ActivationKind::Relu => {
                for v in &mut out.values {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                self.cache = Some(input.clone());
            }
            ActivationKind::Softplus => {
                for v in &mut out.values {
                    *v = softplus(*v);
                }
                self.cache = Some(input.clone());
            }
            ActivationKind::Softmax => {
                let width: usize = input.shape[1..].iter().product();
                for row in out.values.chunks_mut(width) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= s;
                    }
                }
                self.cache = Some(out.clone());
            }
            ActivationKind::Linear => {
                self.cache = Some(input.clone());
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, name: &str) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::StateError(format!("{name}: backward without forward cache")))?;
        let mut g = grad_out.clone();
        match self.kind {
            ActivationKind::Relu => {
                for (v, &x) in g.values.iter_mut().zip(&cache.values) {
                    if x <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            ActivationKind::Softplus => {
                for (v, &x) in g.values.iter_mut().zip(&cache.values) {
                    *v *= sigmoid(x);
                }
            }
            ActivationKind::Softmax => {
                let width: usize = cache.shape[1..].iter().product();
                for (grow, yrow) in g.values.chunks_mut(width).zip(cache.values.chunks(width)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gi, &yi) in grow.iter_mut().zip(yrow) {
                        *gi = yi * (*gi - dot);
                    }
                }
            }
            ActivationKind::Linear => {}
        }
        Ok(g)
    }
}

impl Flatten {
    fn forward(&mut self, input: &Tensor, name: &str) -> Result<Tensor> {
        if input.shape.len() < 2 {
            return Err(shape_err(name, format!("cannot flatten rank {:?}", input.shape)));
        }
        self.cache_in_shape = input.shape.clone();
        let b = input.shape[0];
        let rest: usize = input.shape[1..].iter().product();
        Ok(Tensor::from_values(&[b, rest], input.values.clone()))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        Ok(Tensor::from_values(&self.cache_in_shape, grad_out.values.clone()))
    }
}
