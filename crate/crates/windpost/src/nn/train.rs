//! Minibatch training loop: Adam, early stopping on a validation set, and
//! Gaussian label noise for residual targets.

use super::adam::Adam;
use super::layers::Mode;
use super::net::Network;
use super::tensor::Tensor;
use crate::dist::math::{normal_draw, seed_stream};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;

/// Per-example loss: (raw network outputs, target, offset) ->
/// (loss value, gradient in the raw outputs, target-was-clamped flag).
pub type LossFn<'a> = dyn Fn(&[f64], f64, f64) -> Result<(f64, Vec<f64>, bool)> + Sync + 'a;

/// One training or evaluation set, with per-case linear-regression offsets
/// (zero for direct training) already attached.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs<'a> {
    pub tabular: &'a [Vec<f64>],
    /// Flattened side x side patches for the convolutional input slot.
    pub patches: Option<(&'a [Vec<f64>], usize)>,
    pub targets: &'a [f64],
    pub offsets: &'a [f64],
}

impl<'a> ModelInputs<'a> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn batch_tensors(&self, idx: &[usize]) -> Vec<Tensor> {
        let p = self.tabular[0].len();
        let mut tab = Tensor::zeros(&[idx.len(), p]);
        for (row, &i) in idx.iter().enumerate() {
            tab.values[row * p..(row + 1) * p].copy_from_slice(&self.tabular[i]);
        }
        let mut out = vec![tab];
        if let Some((patches, side)) = self.patches {
            let cells = side * side;
            let mut pt = Tensor::zeros(&[idx.len(), 1, side, side]);
            for (row, &i) in idx.iter().enumerate() {
                pt.values[row * cells..(row + 1) * cells].copy_from_slice(&patches[i]);
            }
            out.push(pt);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Standard deviation of the Gaussian label noise added to training
    /// targets (the paper reports its variance).
    pub noise_sigma: f64,
    /// Redraw the noise every epoch (flag exposed because the paper does not
    /// state its convention).
    pub resample_noise_each_epoch: bool,
    pub learning_rate: f64,
    pub decay: f64,
    /// L1 penalty on the weights; 0 disables the hook.
    pub l1: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 60,
            patience: 5,
            noise_sigma: 0.0,
            resample_noise_each_epoch: true,
            learning_rate: 1e-3,
            decay: 0.0,
            l1: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot of the network at the best validation epoch.
    pub network: Network,
    /// 1-based index of the best epoch.
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    /// Training targets that fell outside a histogram head's support.
    pub clamped_targets: usize,
}

/// Mean loss of a network over a dataset, in inference mode.
pub fn evaluate(net: &mut Network, data: &ModelInputs, loss: &LossFn, batch_size: usize) -> Result<f64> {
    let n = data.len();
    let mut rng = seed_stream(0, "eval-unused", 0);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size) {
        let inputs = data.batch_tensors(chunk);
        let out = net.forward(&inputs, Mode::Infer, &mut rng)?;
        for (row, &i) in chunk.iter().enumerate() {
            let (l, _, _) = loss(out.row(row), data.targets[i], data.offsets[i])?;
            total += l;
        }
    }
    Ok(total / n as f64)
}

/// Train with early stopping: label noise is added to the training targets
/// only, validation loss uses the same scoring rule in inference mode, and
/// the best-validation snapshot is returned together with the epoch log.
pub fn train(
    net: Network,
    train_data: &ModelInputs,
    val_data: &ModelInputs,
    loss: &LossFn,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_metric(net, train_data, val_data, loss, None, cfg)
}

/// As [`train`], but early stopping may watch a different validation metric
/// than the training rule (e.g. CRPS while training on the likelihood).
pub fn train_with_metric(
    mut net: Network,
    train_data: &ModelInputs,
    val_data: &ModelInputs,
    loss: &LossFn,
    val_metric: Option<&LossFn>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::DomainError("training and validation sets must be nonempty".into()));
    }
    if cfg.max_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::ConfigError("max_epochs and batch_size must be at least 1".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate, cfg.decay);
    let mut best: Option<(f64, Network, usize)> = None;
    let mut epochs = Vec::new();
    let mut clamped = 0usize;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let (train_loss, epoch_clamped) =
            run_epoch(&mut net, train_data, loss, cfg, &mut adam, epoch)?;
        clamped += epoch_clamped;
        let val_loss = evaluate(&mut net, val_data, val_metric.unwrap_or(loss), cfg.batch_size)?;
        epochs.push(EpochRecord { epoch, train_loss, val_loss });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            let mut snap = net.clone();
            snap.clear_state();
            best = Some((val_loss, snap, epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    let (_, network, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { network, best_epoch, epochs, clamped_targets: clamped })
}

/// Train for a fixed number of epochs with no early stopping (full-set
/// retraining). Returns the final network and the epoch log.
pub fn train_fixed(
    mut net: Network,
    train_data: &ModelInputs,
    loss: &LossFn,
    cfg: &TrainConfig,
    n_epochs: usize,
) -> Result<(Network, Vec<EpochRecord>)> {
    if n_epochs == 0 {
        return Err(Error::ConfigError("fixed training needs at least one epoch".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate, cfg.decay);
    let mut epochs = Vec::new();
    for epoch in 1..=n_epochs {
        let (train_loss, _) = run_epoch(&mut net, train_data, loss, cfg, &mut adam, epoch)?;
        epochs.push(EpochRecord { epoch, train_loss, val_loss: f64::NAN });
    }
    net.clear_state();
    Ok((net, epochs))
}

fn run_epoch(
    net: &mut Network,
    data: &ModelInputs,
    loss: &LossFn,
    cfg: &TrainConfig,
    adam: &mut Adam,
    epoch: usize,
) -> Result<(f64, usize)> {
    let n = data.len();
    let noise_epoch = if cfg.resample_noise_each_epoch { epoch as u64 } else { 0 };
    let mut noise_rng = seed_stream(cfg.seed, "label-noise", noise_epoch);
    let noisy: Vec<f64> = if cfg.noise_sigma > 0.0 {
        data.targets
            .iter()
            .map(|&t| t + cfg.noise_sigma * normal_draw(&mut noise_rng))
            .collect()
    } else {
        data.targets.to_vec()
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed_stream(cfg.seed, "shuffle", epoch as u64);
    order.shuffle(&mut shuffle_rng);
    let mut dropout_rng = seed_stream(cfg.seed, "dropout", epoch as u64);

    let mut total = 0.0;
    let mut clamped = 0usize;
    for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let inputs = data.batch_tensors(chunk);
        let out = net.forward(&inputs, Mode::Train, &mut dropout_rng)?;
        let raw_dim = out.features();
        let mut grad = Tensor::zeros(&out.shape);
        let mut batch_loss = 0.0;
        for (row, &i) in chunk.iter().enumerate() {
            let (l, g, was_clamped) = loss(out.row(row), noisy[i], data.offsets[i])?;
            batch_loss += l;
            if was_clamped {
                clamped += 1;
            }
            let scale = 1.0 / chunk.len() as f64;
            for (k, gv) in g.iter().enumerate() {
                grad.values[row * raw_dim + k] = gv * scale;
            }
        }
        batch_loss /= chunk.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::DivergedError { epoch, batch: batch_no });
        }
        total += batch_loss * chunk.len() as f64;
        net.zero_grads();
        net.backward(&grad)?;
        if cfg.l1 > 0.0 {
            for (params, grads) in net.params_and_grads() {
                for (p, g) in params.iter().zip(grads.iter_mut()) {
                    *g += cfg.l1 * p.signum();
                }
            }
        }
        adam.step(&mut net.params_and_grads());
    }
    Ok((total / n as f64, clamped))
}
