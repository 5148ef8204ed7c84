//! Per-method training and prediction: climatology, linear regression,
//! quantile regression forests, and the neural heads, each producing
//! [`PredictiveDistribution`]s in wind-speed space, with model and prediction
//! file formats for the CLI pipeline.

use super::{EarlyStopMetric, ExperimentConfig, MethodId};
use crate::data::{extract_features, extract_patch, Dataset, PredictorSpec, Statistic, VariableId};
use crate::dist::{to_speed_space, EmpiricalCdf, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::heads::{ArchitectureConfig, HeadSpec, LossRule, Template};
use crate::linreg::{fit_ols, forward_stepwise, residualize, LinearModel};
use crate::nn::{
    read_network, train, train_fixed, train_with_metric, write_network, EpochRecord, Mode,
    ModelInputs, Network, Tensor, TrainConfig,
};
use crate::qrf::{fit_forest, predict_cdf, Forest, ForestParams};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Core predictor of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Climatology {
        per_station: Vec<(u32, EmpiricalCdf)>,
        pooled: EmpiricalCdf,
        /// Predict from the pooled CDF for every station.
        use_pooled: bool,
    },
    /// Deterministic point forecast from the linear model.
    Linreg,
    Forest(Forest),
    Network { net: Network, head: HeadSpec },
}

/// A fitted method plus everything prediction needs: predictor specs,
/// feature standardization, the offset regression, and the core model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub method: MethodId,
    pub predictors: Vec<PredictorSpec>,
    /// Per-feature (mean, std) used to standardize network inputs.
    pub feature_norm: Vec<(f64, f64)>,
    pub patch_side: usize,
    /// Global (mean, std) of the training patches.
    pub patch_norm: (f64, f64),
    pub linreg: Option<LinearModel>,
    pub kind: ModelKind,
}

/// Outcome of training one method on one fold.
pub struct TrainingArtifacts {
    pub model: TrainedModel,
    /// Best epoch and the epoch log, for neural methods.
    pub best_epoch: Option<usize>,
    pub epoch_log: Vec<EpochRecord>,
    pub clamped_targets: usize,
}

fn head_for(config: &ExperimentConfig) -> Option<HeadSpec> {
    match config.method {
        MethodId::Nn => Some(HeadSpec::quantized_softmax(false)),
        MethodId::NnLr | MethodId::CnnLr => Some(HeadSpec::quantized_softmax(true)),
        MethodId::CnnLrKmn => Some(HeadSpec::kmn(config.params.kernels)),
        MethodId::CnnLrN0 => Some(HeadSpec::truncated_normal(true)),
        _ => None,
    }
}

fn template_for(method: MethodId) -> Option<Template> {
    match method {
        MethodId::Nn => Some(Template::Nn),
        MethodId::NnLr => Some(Template::NnLr),
        MethodId::CnnLr => Some(Template::CnnLr),
        MethodId::CnnLrKmn => Some(Template::CnnLrKmn),
        MethodId::CnnLrN0 => Some(Template::CnnLrN0),
        _ => None,
    }
}

/// Train a method. Neural methods early-stop on `validation` unless a fixed
/// epoch count is requested through `fixed_epochs`.
pub fn train_method(
    config: &ExperimentConfig,
    train_ds: &Dataset,
    validation: Option<&Dataset>,
    fixed_epochs: Option<usize>,
) -> Result<TrainingArtifacts> {
    if train_ds.cases.is_empty() {
        return Err(Error::DomainError("training dataset is empty".into()));
    }
    let offset_model = if config.method.uses_residuals() {
        Some(fit_ols(
            &train_ds
                .cases
                .iter()
                .map(|c| extract_features(c, &config.offset_predictors))
                .collect::<Result<Vec<_>>>()?,
            &train_ds.cases.iter().map(|c| c.observation).collect::<Vec<_>>(),
            &config.offset_predictors,
        )?)
    } else {
        None
    };

    match config.method {
        MethodId::Climatology => {
            let mut per_station: Vec<(u32, Vec<f64>)> = Vec::new();
            for case in &train_ds.cases {
                match per_station.iter_mut().find(|(id, _)| *id == case.station_id) {
                    Some((_, v)) => v.push(case.observation),
                    None => per_station.push((case.station_id, vec![case.observation])),
                }
            }
            per_station.sort_by_key(|(id, _)| *id);
            let pooled = EmpiricalCdf::from_sample(
                train_ds.cases.iter().map(|c| c.observation).collect(),
            )?;
            let per_station = per_station
                .into_iter()
                .map(|(id, v)| Ok((id, EmpiricalCdf::from_sample(v)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainingArtifacts {
                model: TrainedModel {
                    method: config.method,
                    predictors: Vec::new(),
                    feature_norm: Vec::new(),
                    patch_side: 0,
                    patch_norm: (0.0, 1.0),
                    linreg: None,
                    kind: ModelKind::Climatology {
                        per_station,
                        pooled,
                        use_pooled: config.params.pooled_climatology,
                    },
                },
                best_epoch: None,
                epoch_log: Vec::new(),
                clamped_targets: 0,
            })
        }
        MethodId::Linreg => {
            let model = forward_stepwise(&config.predictors, train_ds, config.params.stepwise_stop_tol)?;
            Ok(TrainingArtifacts {
                model: TrainedModel {
                    method: config.method,
                    predictors: model.specs.clone(),
                    feature_norm: Vec::new(),
                    patch_side: 0,
                    patch_norm: (0.0, 1.0),
                    linreg: Some(model),
                    kind: ModelKind::Linreg,
                },
                best_epoch: None,
                epoch_log: Vec::new(),
                clamped_targets: 0,
            })
        }
        MethodId::Qrf | MethodId::QrfLr => {
            let x: Vec<Vec<f64>> = train_ds
                .cases
                .iter()
                .map(|c| extract_features(c, &config.predictors))
                .collect::<Result<_>>()?;
            let y: Vec<f64> = match &offset_model {
                Some(m) => residualize(m, train_ds)?.into_iter().map(|(r, _)| r).collect(),
                None => train_ds.cases.iter().map(|c| c.observation).collect(),
            };
            let n_trees = fixed_epochs.map_or(config.params.n_trees, |_| config.params.final_n_trees);
            let params = ForestParams {
                n_trees,
                min_leaf: config.params.min_leaf,
                max_features: config.params.max_features.unwrap_or(usize::MAX),
                impurity: config.params.impurity,
                bootstrap: config.params.bootstrap,
                seed: config.seed,
            };
            let forest = fit_forest(&x, &y, &params)?;
            Ok(TrainingArtifacts {
                model: TrainedModel {
                    method: config.method,
                    predictors: config.predictors.clone(),
                    feature_norm: Vec::new(),
                    patch_side: 0,
                    patch_norm: (0.0, 1.0),
                    linreg: offset_model,
                    kind: ModelKind::Forest(forest),
                },
                best_epoch: None,
                epoch_log: Vec::new(),
                clamped_targets: 0,
            })
        }
        _ => train_neural(config, train_ds, validation, fixed_epochs, offset_model),
    }
}

struct Prepared {
    tabular: Vec<Vec<f64>>,
    patches: Option<Vec<Vec<f64>>>,
    targets: Vec<f64>,
    offsets: Vec<f64>,
}

fn prepare_inputs(
    ds: &Dataset,
    predictors: &[PredictorSpec],
    feature_norm: &[(f64, f64)],
    patch_side: usize,
    patch_norm: (f64, f64),
    offset_model: Option<&LinearModel>,
) -> Result<Prepared> {
    let mut tabular = Vec::with_capacity(ds.cases.len());
    for case in &ds.cases {
        let mut row = extract_features(case, predictors)?;
        for (v, (m, s)) in row.iter_mut().zip(feature_norm) {
            *v = (*v - m) / s;
        }
        tabular.push(row);
    }
    let patches = if patch_side > 0 {
        let (pm, psd) = patch_norm;
        let mut rows = Vec::with_capacity(ds.cases.len());
        for case in &ds.cases {
            let mut p = extract_patch(case, patch_side)?;
            for v in &mut p {
                *v = (*v - pm) / psd;
            }
            rows.push(p);
        }
        Some(rows)
    } else {
        None
    };
    let (targets, offsets) = match offset_model {
        Some(m) => {
            let pairs = residualize(m, ds)?;
            (pairs.iter().map(|(r, _)| *r).collect(), pairs.iter().map(|(_, f)| *f).collect())
        }
        None => (
            ds.cases.iter().map(|c| c.observation).collect(),
            vec![0.0; ds.cases.len()],
        ),
    };
    Ok(Prepared { tabular, patches, targets, offsets })
}

fn standardization(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = rows.len() as f64;
    let p = rows[0].len();
    (0..p)
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
            (m, v.sqrt().max(1e-9))
        })
        .collect()
}

fn train_neural(
    config: &ExperimentConfig,
    train_ds: &Dataset,
    validation: Option<&Dataset>,
    fixed_epochs: Option<usize>,
    offset_model: Option<LinearModel>,
) -> Result<TrainingArtifacts> {
    let head = head_for(config).expect("neural method has a head");
    let params = &config.params;
    let patch_side = if config.method.is_convolutional() { params.patch_side } else { 0 };

    // Standardization statistics from the raw training features/patches.
    let raw_features: Vec<Vec<f64>> = train_ds
        .cases
        .iter()
        .map(|c| extract_features(c, &config.predictors))
        .collect::<Result<_>>()?;
    let feature_norm = standardization(&raw_features);
    let patch_norm = if patch_side > 0 {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0.0;
        for case in &train_ds.cases {
            for v in extract_patch(case, patch_side)? {
                sum += v;
                sumsq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        ((mean), (sumsq / count - mean * mean).sqrt().max(1e-9))
    } else {
        (0.0, 1.0)
    };

    let prep = prepare_inputs(
        train_ds,
        &config.predictors,
        &feature_norm,
        patch_side,
        patch_norm,
        offset_model.as_ref(),
    )?;
    let train_inputs = ModelInputs {
        tabular: &prep.tabular,
        patches: prep.patches.as_deref().map(|p| (p, patch_side)),
        targets: &prep.targets,
        offsets: &prep.offsets,
    };

    let arch = ArchitectureConfig {
        template: template_for(config.method).unwrap(),
        n_features: config.predictors.len(),
        patch_side,
        blocks: params.blocks,
        layer_size: params.layer_size,
        conv_blocks: params.conv_blocks,
        conv_filters: params.conv_filters,
        dropout: params.dropout,
        seed: config.seed,
    };
    let net = crate::heads::assemble_model(&arch, &head)?;
    let loss = head.loss_fn(params.loss_rule);
    let tc = TrainConfig {
        batch_size: params.batch_size,
        max_epochs: params.max_epochs,
        patience: params.patience,
        noise_sigma: params.noise_sigma(),
        resample_noise_each_epoch: params.resample_noise,
        learning_rate: params.learning_rate,
        decay: params.decay,
        l1: params.l1,
        seed: config.seed,
    };

    let (net, best_epoch, epoch_log, clamped) = if let Some(n_epochs) = fixed_epochs {
        let (net, log) = train_fixed(net, &train_inputs, &loss, &tc, n_epochs)?;
        (net, None, log, 0)
    } else {
        let val_ds = validation.ok_or_else(|| {
            Error::ConfigError("neural training needs a validation set or a fixed epoch count".into())
        })?;
        let vprep = prepare_inputs(
            val_ds,
            &config.predictors,
            &feature_norm,
            patch_side,
            patch_norm,
            offset_model.as_ref(),
        )?;
        let val_inputs = ModelInputs {
            tabular: &vprep.tabular,
            patches: vprep.patches.as_deref().map(|p| (p, patch_side)),
            targets: &vprep.targets,
            offsets: &vprep.offsets,
        };
        let outcome = match params.early_stopping {
            EarlyStopMetric::Loss => train(net, &train_inputs, &val_inputs, &loss, &tc)?,
            EarlyStopMetric::Crps => {
                // Early stop on the residual-space CRPS regardless of the
                // training rule.
                let crps_loss = head.loss_fn(LossRule::Crps);
                train_with_metric(
                    net,
                    &train_inputs,
                    &val_inputs,
                    &loss,
                    Some(&crps_loss),
                    &tc,
                )?
            }
        };
        (outcome.network, Some(outcome.best_epoch), outcome.epochs, outcome.clamped_targets)
    };

    Ok(TrainingArtifacts {
        model: TrainedModel {
            method: config.method,
            predictors: config.predictors.clone(),
            feature_norm,
            patch_side,
            patch_norm,
            linreg: offset_model,
            kind: ModelKind::Network { net, head },
        },
        best_epoch,
        epoch_log,
        clamped_targets: clamped,
    })
}

/// Predict speed-space distributions for every case of a dataset.
pub fn predict_dataset(model: &TrainedModel, ds: &Dataset) -> Result<Vec<PredictiveDistribution>> {
    match &model.kind {
        ModelKind::Climatology { per_station, pooled, use_pooled } => ds
            .cases
            .iter()
            .map(|case| {
                let cdf = if *use_pooled {
                    pooled
                } else {
                    // Stations unseen in training fall back to the pool.
                    per_station
                        .iter()
                        .find(|(id, _)| *id == case.station_id)
                        .map(|(_, c)| c)
                        .unwrap_or(pooled)
                };
                Ok(PredictiveDistribution::Empirical(cdf.clone()))
            })
            .collect(),
        ModelKind::Linreg => {
            let m = model.linreg.as_ref().ok_or_else(|| {
                Error::StateError("linear-regression model file is missing its coefficients".into())
            })?;
            ds.cases
                .iter()
                .map(|case| {
                    let f = m.predict_case(case)?;
                    Ok(PredictiveDistribution::Empirical(EmpiricalCdf::new(vec![f], vec![1.0])?))
                })
                .collect()
        }
        ModelKind::Forest(forest) => ds
            .cases
            .iter()
            .map(|case| {
                let x = extract_features(case, &model.predictors)?;
                let cdf = predict_cdf(forest, &x);
                match &model.linreg {
                    Some(m) => {
                        let f = m.predict_case(case)?;
                        to_speed_space(PredictiveDistribution::Empirical(cdf), f, 0.0)
                    }
                    None => Ok(PredictiveDistribution::Empirical(cdf)),
                }
            })
            .collect(),
        ModelKind::Network { net, head } => {
            let prep = prepare_inputs(
                ds,
                &model.predictors,
                &model.feature_norm,
                model.patch_side,
                model.patch_norm,
                model.linreg.as_ref(),
            )?;
            let mut net = net.clone();
            let mut out = Vec::with_capacity(ds.cases.len());
            let mut rng = crate::dist::math::seed_stream(0, "predict", 0);
            let idx: Vec<usize> = (0..ds.cases.len()).collect();
            for chunk in idx.chunks(256) {
                let inputs = build_tensors(&prep, chunk, model.patch_side);
                let raw = net.forward(&inputs, Mode::Infer, &mut rng)?;
                for (row, &i) in chunk.iter().enumerate() {
                    out.push(head.head_distribution(raw.row(row), prep.offsets[i])?);
                }
            }
            Ok(out)
        }
    }
}

fn build_tensors(prep: &Prepared, idx: &[usize], patch_side: usize) -> Vec<Tensor> {
    let p = prep.tabular[0].len();
    let mut tab = Tensor::zeros(&[idx.len(), p]);
    for (row, &i) in idx.iter().enumerate() {
        tab.values[row * p..(row + 1) * p].copy_from_slice(&prep.tabular[i]);
    }
    let mut out = vec![tab];
    if let Some(patches) = &prep.patches {
        let cells = patch_side * patch_side;
        let mut pt = Tensor::zeros(&[idx.len(), 1, patch_side, patch_side]);
        for (row, &i) in idx.iter().enumerate() {
            pt.values[row * cells..(row + 1) * cells].copy_from_slice(&patches[i]);
        }
        out.push(pt);
    }
    out
}

// ---------------------------------------------------------------------------
// Model file: magic, method, predictors, normalization, offset model, core.
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"WPMD";
const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    write_str(&mut w, model.method.tag())?;
    write_specs(&mut w, &model.predictors)?;
    w.write_all(&(model.feature_norm.len() as u32).to_le_bytes())?;
    for (m, s) in &model.feature_norm {
        w.write_all(&m.to_le_bytes())?;
        w.write_all(&s.to_le_bytes())?;
    }
    w.write_all(&(model.patch_side as u32).to_le_bytes())?;
    w.write_all(&model.patch_norm.0.to_le_bytes())?;
    w.write_all(&model.patch_norm.1.to_le_bytes())?;
    match &model.linreg {
        None => w.write_all(&[0u8])?,
        Some(m) => {
            w.write_all(&[1u8])?;
            write_specs(&mut w, &m.specs)?;
            w.write_all(&(m.coefficients.len() as u32).to_le_bytes())?;
            for c in &m.coefficients {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&m.intercept.to_le_bytes())?;
            w.write_all(&m.training_mse.to_le_bytes())?;
        }
    }
    match &model.kind {
        ModelKind::Climatology { per_station, pooled, use_pooled } => {
            w.write_all(&[0u8])?;
            w.write_all(&[u8::from(*use_pooled)])?;
            w.write_all(&(per_station.len() as u32).to_le_bytes())?;
            for (id, cdf) in per_station {
                w.write_all(&id.to_le_bytes())?;
                write_cdf(&mut w, cdf)?;
            }
            write_cdf(&mut w, pooled)?;
        }
        ModelKind::Linreg => w.write_all(&[1u8])?,
        ModelKind::Forest(forest) => {
            w.write_all(&[2u8])?;
            crate::qrf::write_forest(&mut w, forest)?;
        }
        ModelKind::Network { net, head } => {
            w.write_all(&[3u8])?;
            w.write_all(&[match head.kind {
                crate::heads::HeadKind::QuantizedSoftmax => 0u8,
                crate::heads::HeadKind::Kmn => 1,
                crate::heads::HeadKind::TruncatedNormal => 2,
            }])?;
            w.write_all(&[u8::from(head.residual_mode)])?;
            w.write_all(&(head.size as u32).to_le_bytes())?;
            let mut clean = net.clone();
            clean.clear_state();
            write_network(&mut w, &clean)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let err = |m: &str| Error::FormatError { file: path.display().to_string(), message: m.into() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| err("missing magic"))?;
    if &magic != MODEL_MAGIC {
        return Err(err("not a model file"));
    }
    let version = read_u32(&mut r).map_err(|_| err("missing version"))?;
    if version != MODEL_VERSION {
        return Err(err(&format!("unsupported model version {version}")));
    }
    let method = MethodId::parse(&read_str(&mut r).map_err(|_| err("truncated method tag"))?)?;
    let predictors = read_specs(&mut r, path)?;
    let nf = read_u32(&mut r).map_err(|_| err("truncated normalization"))? as usize;
    let mut feature_norm = Vec::with_capacity(nf);
    for _ in 0..nf {
        feature_norm.push((
            read_f64(&mut r).map_err(|_| err("truncated normalization"))?,
            read_f64(&mut r).map_err(|_| err("truncated normalization"))?,
        ));
    }
    let patch_side = read_u32(&mut r).map_err(|_| err("truncated patch info"))? as usize;
    let patch_norm = (
        read_f64(&mut r).map_err(|_| err("truncated patch info"))?,
        read_f64(&mut r).map_err(|_| err("truncated patch info"))?,
    );
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(|_| err("truncated offset model"))?;
    let linreg = if flag[0] == 1 {
        let specs = read_specs(&mut r, path)?;
        let nc = read_u32(&mut r).map_err(|_| err("truncated coefficients"))? as usize;
        let mut coefficients = Vec::with_capacity(nc);
        for _ in 0..nc {
            coefficients.push(read_f64(&mut r).map_err(|_| err("truncated coefficients"))?);
        }
        Some(LinearModel {
            specs,
            coefficients,
            intercept: read_f64(&mut r).map_err(|_| err("truncated intercept"))?,
            training_mse: read_f64(&mut r).map_err(|_| err("truncated mse"))?,
        })
    } else {
        None
    };
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(|_| err("truncated model kind"))?;
    let kind = match tag[0] {
        0 => {
            let mut pooled_b = [0u8; 1];
            r.read_exact(&mut pooled_b).map_err(|_| err("truncated climatology"))?;
            let n = read_u32(&mut r).map_err(|_| err("truncated climatology"))? as usize;
            let mut per_station = Vec::with_capacity(n);
            for _ in 0..n {
                let mut idb = [0u8; 4];
                r.read_exact(&mut idb).map_err(|_| err("truncated climatology"))?;
                per_station.push((u32::from_le_bytes(idb), read_cdf(&mut r, path)?));
            }
            ModelKind::Climatology {
                per_station,
                pooled: read_cdf(&mut r, path)?,
                use_pooled: pooled_b[0] != 0,
            }
        }
        1 => ModelKind::Linreg,
        2 => ModelKind::Forest(crate::qrf::read_forest(&mut r, path)?),
        3 => {
            let mut hk = [0u8; 1];
            r.read_exact(&mut hk).map_err(|_| err("truncated head"))?;
            let mut res = [0u8; 1];
            r.read_exact(&mut res).map_err(|_| err("truncated head"))?;
            let size = read_u32(&mut r).map_err(|_| err("truncated head"))? as usize;
            let head = HeadSpec {
                kind: match hk[0] {
                    0 => crate::heads::HeadKind::QuantizedSoftmax,
                    1 => crate::heads::HeadKind::Kmn,
                    2 => crate::heads::HeadKind::TruncatedNormal,
                    _ => return Err(err("bad head kind")),
                },
                residual_mode: res[0] != 0,
                size,
            };
            ModelKind::Network { net: read_network(&mut r, path)?, head }
        }
        _ => return Err(err("bad model kind tag")),
    };
    Ok(TrainedModel { method, predictors, feature_norm, patch_side, patch_norm, linreg, kind })
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u16).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let mut lb = [0u8; 2];
    r.read_exact(&mut lb)?;
    let mut buf = vec![0u8; u16::from_le_bytes(lb) as usize];
    r.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn write_specs(w: &mut impl Write, specs: &[PredictorSpec]) -> Result<()> {
    w.write_all(&(specs.len() as u32).to_le_bytes())?;
    for s in specs {
        let var = VariableId::ALL.iter().position(|v| *v == s.variable).unwrap() as u8;
        let stat = match s.statistic {
            Statistic::Mean => 0u8,
            Statistic::Max => 1,
            Statistic::Min => 2,
            Statistic::Point => 3,
        };
        w.write_all(&[var, stat])?;
        w.write_all(&(s.box_halfwidth_cells as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_specs(r: &mut impl Read, path: &Path) -> Result<Vec<PredictorSpec>> {
    let err = |m: &str| Error::FormatError { file: path.display().to_string(), message: m.into() };
    let n = read_u32(r).map_err(|_| err("truncated predictor list"))? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 2];
        r.read_exact(&mut b).map_err(|_| err("truncated predictor"))?;
        let variable = *VariableId::ALL.get(b[0] as usize).ok_or_else(|| err("bad variable index"))?;
        let statistic = match b[1] {
            0 => Statistic::Mean,
            1 => Statistic::Max,
            2 => Statistic::Min,
            3 => Statistic::Point,
            _ => return Err(err("bad statistic tag")),
        };
        let halfwidth = read_u32(r).map_err(|_| err("truncated predictor"))? as usize;
        out.push(PredictorSpec::new(variable, statistic, halfwidth)?);
    }
    Ok(out)
}

fn write_cdf(w: &mut impl Write, cdf: &EmpiricalCdf) -> Result<()> {
    w.write_all(&(cdf.values.len() as u32).to_le_bytes())?;
    for v in &cdf.values {
        w.write_all(&v.to_le_bytes())?;
    }
    for wt in &cdf.weights {
        w.write_all(&wt.to_le_bytes())?;
    }
    Ok(())
}

fn read_cdf(r: &mut impl Read, path: &Path) -> Result<EmpiricalCdf> {
    let err = |m: &str| Error::FormatError { file: path.display().to_string(), message: m.into() };
    let n = read_u32(r).map_err(|_| err("truncated cdf"))? as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(read_f64(r).map_err(|_| err("truncated cdf"))?);
    }
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        weights.push(read_f64(r).map_err(|_| err("truncated cdf"))?);
    }
    EmpiricalCdf::from_normalized(values, weights)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

// ---------------------------------------------------------------------------
// Prediction files: one CSV row per case, family tag plus parameter list.
// ---------------------------------------------------------------------------

pub fn write_predictions(
    path: &Path,
    method: &str,
    preds: &[PredictiveDistribution],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# windpost-predictions v1")?;
    writeln!(w, "# method = {method}")?;
    for (case, d) in preds.iter().enumerate() {
        let fields = d.to_csv_fields();
        writeln!(w, "{case},{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(String, Vec<PredictiveDistribution>)> {
    let err = |m: String| Error::FormatError { file: path.display().to_string(), message: m };
    let mut method = String::new();
    let mut preds = Vec::new();
    for (lineno, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                if k.trim() == "method" {
                    method = v.trim().to_string();
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let case: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("line {}: bad case index", lineno + 1)))?;
        if case != preds.len() {
            return Err(err(format!(
                "line {}: case {case} out of order (expected {})",
                lineno + 1,
                preds.len()
            )));
        }
        preds.push(PredictiveDistribution::from_csv_fields(&fields[1..]).map_err(|e| {
            err(format!("line {}: {e}", lineno + 1))
        })?);
    }
    if method.is_empty() {
        return Err(err("missing `# method = <id>` header".into()));
    }
    Ok((method, preds))
}
