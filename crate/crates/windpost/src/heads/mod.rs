//! Conditional-density output heads: quantized softmax, kernel mixture, and
//! truncated normal, each with differentiable CRPS and likelihood losses, plus
//! the architecture templates that assemble full networks around them.
//!
//! Losses are computed in residual space during training (the target is the
//! residual, the truncation point of the normal head is minus the per-case
//! linear forecast); speed-space conversion happens only at prediction time.

use crate::dist::math::{norm_cdf, norm_pdf, sigmoid, softmax, softplus};
use crate::dist::{
    histogram_from_logits, mixture_from_raw, residual_centers, residual_edges, speed_edges,
    to_speed_space, truncnorm_from_raw, Histogram, PredictiveDistribution, TruncatedNormal,
    SIGMA_FLOOR,
};
use crate::error::{Error, Result};
use crate::nn::{ActivationKind, LayerSpec, Network, NodeInput, NodeSpec};
use crate::scoring::crps::{crps_histogram_grad_probs, crps_mixture_with_grad, crps_truncnorm_with_grad};

/// Direct quantized-softmax bins: 1 m/s wide on [0, 30].
pub const DIRECT_BINS: usize = 30;
/// Residual quantized-softmax bins: 0.1 m/s wide on [-15, 15].
pub const RESIDUAL_BINS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    QuantizedSoftmax,
    Kmn,
    TruncatedNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossRule {
    Crps,
    Nll,
}

impl LossRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "crps" => Ok(LossRule::Crps),
            "nll" | "log-likelihood" | "loglik" => Ok(LossRule::Nll),
            other => Err(Error::ConfigError(format!("unknown loss rule {other:?}"))),
        }
    }
}

/// Output-head descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub residual_mode: bool,
    /// Histogram bins (quantized softmax) or kernel count (KMN).
    pub size: usize,
}

impl HeadSpec {
    pub fn quantized_softmax(residual_mode: bool) -> Self {
        Self {
            kind: HeadKind::QuantizedSoftmax,
            residual_mode,
            size: if residual_mode { RESIDUAL_BINS } else { DIRECT_BINS },
        }
    }

    /// Kernel mixture over the fixed residual grid; residual training only.
    pub fn kmn(kernels: usize) -> Self {
        Self { kind: HeadKind::Kmn, residual_mode: true, size: kernels }
    }

    pub fn truncated_normal(residual_mode: bool) -> Self {
        Self { kind: HeadKind::TruncatedNormal, residual_mode, size: 2 }
    }

    /// Width of the network's raw output layer.
    pub fn raw_dim(&self) -> usize {
        match self.kind {
            HeadKind::QuantizedSoftmax => self.size,
            HeadKind::Kmn => 2 * self.size,
            HeadKind::TruncatedNormal => 2,
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        if self.residual_mode {
            residual_edges(self.size)
        } else {
            speed_edges(self.size)
        }
    }

    fn check_raw(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_dim() {
            return Err(Error::ShapeError {
                layer: "head".into(),
                message: format!("expected {} raw outputs, got {}", self.raw_dim(), raw.len()),
            });
        }
        Ok(())
    }

    /// Residual-space distribution implied by the raw outputs (the object the
    /// training losses score). `offset` only matters for the truncated-normal
    /// head, whose truncation point is minus the linear forecast.
    pub fn residual_distribution(&self, raw: &[f64], offset: f64) -> Result<PredictiveDistribution> {
        self.check_raw(raw)?;
        Ok(match self.kind {
            HeadKind::QuantizedSoftmax => {
                PredictiveDistribution::Histogram(histogram_from_logits(raw, self.edges())?)
            }
            HeadKind::Kmn => PredictiveDistribution::Mixture(mixture_from_raw(
                raw,
                &residual_centers(self.size),
            )?),
            HeadKind::TruncatedNormal => {
                let lower = if self.residual_mode { -offset } else { 0.0 };
                PredictiveDistribution::TruncNormal(truncnorm_from_raw(raw, lower)?)
            }
        })
    }

    /// Wind-speed-space predictive distribution: residual heads are shifted
    /// by the linear forecast and renormalized above 0 m/s. A forecast whose
    /// mass lies entirely below the floor (a strongly negative offset on a
    /// calm case) degrades to its limit, the point mass at 0 m/s.
    pub fn head_distribution(&self, raw: &[f64], offset: f64) -> Result<PredictiveDistribution> {
        let base = self.residual_distribution(raw, offset)?;
        if !self.residual_mode {
            return Ok(base);
        }
        if let PredictiveDistribution::TruncNormal(t) = &base {
            if t.tail_mass() <= 1e-12 {
                return calm_point_mass();
            }
        }
        match to_speed_space(base, offset, 0.0) {
            Err(Error::DegenerateDistribution(_)) => calm_point_mass(),
            other => other,
        }
    }

    /// Loss and its gradient in the raw network outputs. The target is a
    /// residual in residual mode, the observation otherwise. Returns a flag
    /// when the target had to be clamped to the head's support.
    pub fn head_loss(
        &self,
        raw: &[f64],
        target: f64,
        rule: LossRule,
        offset: f64,
    ) -> Result<(f64, Vec<f64>, bool)> {
        self.check_raw(raw)?;
        match (self.kind, rule) {
            (HeadKind::QuantizedSoftmax, LossRule::Crps) => self.qs_crps(raw, target),
            (HeadKind::QuantizedSoftmax, LossRule::Nll) => self.qs_nll(raw, target),
            (HeadKind::Kmn, LossRule::Crps) => self.kmn_crps(raw, target),
            (HeadKind::Kmn, LossRule::Nll) => self.kmn_nll(raw, target),
            (HeadKind::TruncatedNormal, rule) => self.tn_loss(raw, target, rule, offset),
        }
    }

    fn qs_crps(&self, raw: &[f64], target: f64) -> Result<(f64, Vec<f64>, bool)> {
        let probs = softmax(raw);
        let edges = self.edges();
        let clamped = target < edges[0] || target > edges[self.size];
        let h = Histogram { edges, probs: probs.clone() };
        let (loss, dprobs) = crps_histogram_grad_probs(&h, target, true);
        Ok((loss, chain_softmax(&probs, &dprobs), clamped))
    }

    fn qs_nll(&self, raw: &[f64], target: f64) -> Result<(f64, Vec<f64>, bool)> {
        let probs = softmax(raw);
        let edges = self.edges();
        // Bin of the (possibly clamped) target; discrete cross-entropy, which
        // is bounded below by zero. Relative to a density-based likelihood it
        // differs by the constant log bin width (-log 10 for 0.1 m/s bins).
        let mut clamped = false;
        let k = if target < edges[0] {
            clamped = true;
            0
        } else if target >= edges[self.size] {
            clamped = target > edges[self.size];
            self.size - 1
        } else {
            match edges.binary_search_by(|e| e.partial_cmp(&target).unwrap()) {
                Ok(i) => i.min(self.size - 1),
                Err(i) => i - 1,
            }
        };
        let loss = -probs[k].max(1e-300).ln();
        let mut grad = probs;
        grad[k] -= 1.0;
        Ok((loss, grad, clamped))
    }

    fn kmn_crps(&self, raw: &[f64], target: f64) -> Result<(f64, Vec<f64>, bool)> {
        let g = mixture_from_raw(raw, &residual_centers(self.size))?;
        let (loss, dw, ds) = crps_mixture_with_grad(&g, target);
        let n = self.size;
        let mut grad = vec![0.0; 2 * n];
        grad[..n].copy_from_slice(&chain_softmax(&g.weights, &dw));
        for i in 0..n {
            grad[n + i] = ds[i] * sigmoid(raw[n + i]);
        }
        Ok((loss, grad, false))
    }

    fn kmn_nll(&self, raw: &[f64], target: f64) -> Result<(f64, Vec<f64>, bool)> {
        let n = self.size;
        let centers = residual_centers(n);
        let weights = softmax(&raw[..n]);
        let sigmas: Vec<f64> = raw[n..].iter().map(|&t| softplus(t) + SIGMA_FLOOR).collect();
        // Stable mixture likelihood via log-sum-exp over component log terms.
        let log_terms: Vec<f64> = (0..n)
            .map(|i| {
                let u = (target - centers[i]) / sigmas[i];
                weights[i].max(1e-300).ln() - sigmas[i].ln() - 0.5 * u * u
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        let log_density = crate::dist::math::log_sum_exp(&log_terms);
        let loss = -log_density;
        // Responsibilities r_i = exp(log_terms - log_density).
        let mut grad = vec![0.0; 2 * n];
        for i in 0..n {
            let r = (log_terms[i] - log_density).exp();
            let u = (target - centers[i]) / sigmas[i];
            // d loss / d softmax-input_i = w_i - r_i.
            grad[i] = weights[i] - r;
            // d loss / d sigma_i = -r (u^2 - 1) / sigma, chained through softplus.
            grad[n + i] = -r * (u * u - 1.0) / sigmas[i] * sigmoid(raw[n + i]);
        }
        Ok((loss, grad, false))
    }

    fn tn_loss(&self, raw: &[f64], target: f64, rule: LossRule, offset: f64) -> Result<(f64, Vec<f64>, bool)> {
        let lower = if self.residual_mode { -offset } else { 0.0 };
        let mu = raw[0];
        let sigma = softplus(raw[1]) + SIGMA_FLOOR;
        match rule {
            LossRule::Crps => {
                let t = TruncatedNormal { mu, sigma, lower };
                match crps_truncnorm_with_grad(&t, target) {
                    Ok((loss, dmu, dsigma)) => {
                        Ok((loss, vec![dmu, dsigma * sigmoid(raw[1])], false))
                    }
                    // Fully truncated forecasts converge to the point mass at
                    // the bound: the loss is the distance to it and the
                    // parameter gradients vanish exponentially. Returning the
                    // limit keeps training alive through transient extremes.
                    Err(Error::DegenerateDistribution(_)) => {
                        Ok(((target - lower).abs(), vec![0.0, 0.0], false))
                    }
                    Err(e) => Err(e),
                }
            }
            LossRule::Nll => {
                // Work in the frame where truncation sits at zero; a noisy
                // target below the support is clamped onto it.
                let mut y = target - lower;
                let mut clamped = false;
                if y < 0.0 {
                    y = 0.0;
                    clamped = true;
                }
                let m = mu - lower;
                let u = m / sigma;
                let s = (y - m) / sigma;
                let (ln_p, h) = if u < -7.0 {
                    // Mills-ratio asymptotics: Phi(u) ~ phi(u) / (-u); the
                    // likelihood stays finite and keeps pulling mu upward.
                    let ln_phi = -0.5 * u * u - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    (ln_phi - (-u).ln(), -u - 1.0 / u)
                } else {
                    let p = norm_cdf(u);
                    (p.ln(), norm_pdf(u) / p)
                };
                let loss = 0.5 * s * s + sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + ln_p;
                let dmu = -s / sigma + h / sigma;
                let dsigma = (1.0 - s * s - u * h) / sigma;
                Ok((loss, vec![dmu, dsigma * sigmoid(raw[1])], clamped))
            }
        }
    }

    /// Loss closure for the training loop.
    pub fn loss_fn(self, rule: LossRule) -> impl Fn(&[f64], f64, f64) -> Result<(f64, Vec<f64>, bool)> + Sync {
        move |raw, target, offset| self.head_loss(raw, target, rule, offset)
    }
}

fn calm_point_mass() -> Result<PredictiveDistribution> {
    Ok(PredictiveDistribution::Empirical(crate::dist::EmpiricalCdf::new(
        vec![0.0],
        vec![1.0],
    )?))
}

fn chain_softmax(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
    probs.iter().zip(dprobs).map(|(p, d)| p * (d - dot)).collect()
}

/// Network templates from the architecture tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Nn,
    NnLr,
    CnnLr,
    CnnLrKmn,
    CnnLrN0,
}

impl Template {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "nn" => Template::Nn,
            "nn_lr" => Template::NnLr,
            "cnn_lr" => Template::CnnLr,
            "cnn_lr_kmn" => Template::CnnLrKmn,
            "cnn_lr_n0" => Template::CnnLrN0,
            other => return Err(Error::ConfigError(format!("unknown architecture template {other:?}"))),
        })
    }

    pub fn is_convolutional(&self) -> bool {
        !matches!(self, Template::Nn | Template::NnLr)
    }
}

/// Architecture sizes; defaults follow the selected-model tables.
#[derive(Debug, Clone)]
pub struct ArchitectureConfig {
    pub template: Template,
    pub n_features: usize,
    pub patch_side: usize,
    /// Dense blocks in the fully connected trunk.
    pub blocks: usize,
    pub layer_size: usize,
    pub conv_blocks: usize,
    pub conv_filters: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ArchitectureConfig {
    pub fn dense(template: Template, n_features: usize, blocks: usize, layer_size: usize, dropout: f64, seed: u64) -> Self {
        Self {
            template,
            n_features,
            patch_side: 0,
            blocks,
            layer_size,
            conv_blocks: 0,
            conv_filters: 0,
            dropout,
            seed,
        }
    }
}

const BN_MOMENTUM: f64 = 0.99;
const BN_EPS: f64 = 1e-5;

/// Build the layer graph for a template around the given head.
pub fn assemble_model(config: &ArchitectureConfig, head: &HeadSpec) -> Result<Network> {
    if config.n_features == 0 || config.layer_size == 0 {
        return Err(Error::ConfigError("architecture needs features and a layer size".into()));
    }
    let mut specs: Vec<NodeSpec> = Vec::new();
    let last = |specs: &Vec<NodeSpec>| NodeInput::Node(specs.len() - 1);

    match config.template {
        Template::Nn | Template::NnLr => {
            if config.blocks == 0 {
                return Err(Error::ConfigError("dense template needs at least one block".into()));
            }
            // n blocks of dense + relu + dropout (no batch norm: it did not
            // help the fully connected models).
            let mut input = NodeInput::External(0);
            let mut width = config.n_features;
            for _ in 0..config.blocks {
                specs.push(NodeSpec {
                    spec: LayerSpec::Dense { inputs: width, units: config.layer_size },
                    inputs: vec![input],
                });
                specs.push(NodeSpec {
                    spec: LayerSpec::Activation(ActivationKind::Relu),
                    inputs: vec![last(&specs)],
                });
                specs.push(NodeSpec {
                    spec: LayerSpec::Dropout { rate: config.dropout },
                    inputs: vec![last(&specs)],
                });
                input = last(&specs);
                width = config.layer_size;
            }
            specs.push(NodeSpec {
                spec: LayerSpec::Dense { inputs: width, units: head.raw_dim() },
                inputs: vec![input],
            });
        }
        Template::CnnLr | Template::CnnLrKmn | Template::CnnLrN0 => {
            if config.patch_side == 0 || config.conv_blocks == 0 || config.conv_filters == 0 {
                return Err(Error::ConfigError(
                    "convolutional template needs patch_side, conv_blocks, conv_filters".into(),
                ));
            }
            // Convolutional branch: blocks of conv + relu + batchnorm + pool.
            let mut side = config.patch_side;
            let mut channels = 1usize;
            let mut input = NodeInput::External(1);
            for _ in 0..config.conv_blocks {
                if side < 2 {
                    return Err(Error::ConfigError(format!(
                        "patch of side {} cannot support {} pooling stages",
                        config.patch_side, config.conv_blocks
                    )));
                }
                specs.push(NodeSpec {
                    spec: LayerSpec::Conv2D { in_channels: channels, filters: config.conv_filters },
                    inputs: vec![input],
                });
                specs.push(NodeSpec {
                    spec: LayerSpec::Activation(ActivationKind::Relu),
                    inputs: vec![last(&specs)],
                });
                specs.push(NodeSpec {
                    spec: LayerSpec::BatchNorm { size: config.conv_filters, momentum: BN_MOMENTUM, eps: BN_EPS },
                    inputs: vec![last(&specs)],
                });
                specs.push(NodeSpec { spec: LayerSpec::MaxPool, inputs: vec![last(&specs)] });
                input = last(&specs);
                channels = config.conv_filters;
                side /= 2;
            }
            specs.push(NodeSpec { spec: LayerSpec::Flatten, inputs: vec![input] });
            let flat = side * side * config.conv_filters;
            let flat_node = NodeInput::Node(specs.len() - 1);
            let conv_dense = dense_block(&mut specs, flat_node, flat, config.layer_size, config.dropout);

            // Tabular branch.
            let tab_dense = dense_block(
                &mut specs,
                NodeInput::External(0),
                config.n_features,
                config.layer_size,
                config.dropout,
            );

            specs.push(NodeSpec { spec: LayerSpec::Concat, inputs: vec![tab_dense, conv_dense] });
            let concat_node = NodeInput::Node(specs.len() - 1);
            let joined = dense_block(
                &mut specs,
                concat_node,
                2 * config.layer_size,
                config.layer_size,
                config.dropout,
            );
            specs.push(NodeSpec {
                spec: LayerSpec::Dense { inputs: config.layer_size, units: head.raw_dim() },
                inputs: vec![joined],
            });
        }
    }
    let n_inputs = if config.template.is_convolutional() { 2 } else { 1 };
    let mut rng = crate::dist::math::seed_stream(config.seed, "init", 0);
    Network::build(&specs, n_inputs, &mut rng)
}

/// Dense block of the convolutional architectures: dense + relu + batch norm
/// + dropout. Returns the block's output node.
fn dense_block(
    specs: &mut Vec<NodeSpec>,
    input: NodeInput,
    inputs: usize,
    units: usize,
    dropout: f64,
) -> NodeInput {
    specs.push(NodeSpec { spec: LayerSpec::Dense { inputs, units }, inputs: vec![input] });
    specs.push(NodeSpec {
        spec: LayerSpec::Activation(ActivationKind::Relu),
        inputs: vec![NodeInput::Node(specs.len() - 1)],
    });
    specs.push(NodeSpec {
        spec: LayerSpec::BatchNorm { size: units, momentum: BN_MOMENTUM, eps: BN_EPS },
        inputs: vec![NodeInput::Node(specs.len() - 1)],
    });
    specs.push(NodeSpec {
        spec: LayerSpec::Dropout { rate: dropout },
        inputs: vec![NodeInput::Node(specs.len() - 1)],
    });
    NodeInput::Node(specs.len() - 1)
}
