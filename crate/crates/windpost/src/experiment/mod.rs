//! Experiment orchestration: configs, per-method training and prediction,
//! cross-validation, random hyperparameter search with range narrowing,
//! full-set retraining, and the verification reports behind the CLI.

pub mod config;
pub mod cv;
pub mod methods;
pub mod plot;
pub mod search;
pub mod verify;

pub use config::{ExperimentConfig, RawConfig, SearchSpace};
pub use cv::{run_cv, train_full, FoldOutcome};
pub use methods::{
    predict_dataset, read_predictions, train_method, write_predictions, ModelKind, TrainedModel,
};
pub use search::{narrow_space, random_search, TrialResult};
pub use verify::{verify, MethodScores, VerificationReport};

use crate::data::{PredictorSpec, Statistic, VariableId};
use crate::error::{Error, Result};
use crate::heads::LossRule;
use crate::qrf::Impurity;

/// Post-processing methods the toolkit ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    Climatology,
    Linreg,
    Qrf,
    QrfLr,
    Nn,
    NnLr,
    CnnLr,
    CnnLrKmn,
    CnnLrN0,
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::Climatology,
        MethodId::Linreg,
        MethodId::Qrf,
        MethodId::QrfLr,
        MethodId::Nn,
        MethodId::NnLr,
        MethodId::CnnLr,
        MethodId::CnnLrKmn,
        MethodId::CnnLrN0,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            MethodId::Climatology => "climatology",
            MethodId::Linreg => "linreg",
            MethodId::Qrf => "qrf",
            MethodId::QrfLr => "qrf_lr",
            MethodId::Nn => "nn",
            MethodId::NnLr => "nn_lr",
            MethodId::CnnLr => "cnn_lr",
            MethodId::CnnLrKmn => "cnn_lr_kmn",
            MethodId::CnnLrN0 => "cnn_lr_n0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|m| m.tag() == s)
            .copied()
            .ok_or_else(|| Error::ConfigError(format!("unknown method {s:?}")))
    }

    /// Residual training: the model is fitted to observation minus the
    /// linear-regression forecast.
    pub fn uses_residuals(&self) -> bool {
        matches!(
            self,
            MethodId::QrfLr | MethodId::NnLr | MethodId::CnnLr | MethodId::CnnLrKmn | MethodId::CnnLrN0
        )
    }

    pub fn is_neural(&self) -> bool {
        matches!(
            self,
            MethodId::Nn | MethodId::NnLr | MethodId::CnnLr | MethodId::CnnLrKmn | MethodId::CnnLrN0
        )
    }

    pub fn is_convolutional(&self) -> bool {
        matches!(self, MethodId::CnnLr | MethodId::CnnLrKmn | MethodId::CnnLrN0)
    }
}

/// Early-stopping metric: the training rule evaluated on validation, or the
/// validation CRPS of the speed-space forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStopMetric {
    Loss,
    Crps,
}

/// Every tunable knob across methods, with per-method defaults from the
/// selected-model tables.
#[derive(Debug, Clone)]
pub struct MethodParams {
    // Forest
    pub n_trees: usize,
    pub final_n_trees: usize,
    pub min_leaf: usize,
    /// None means all features per split.
    pub max_features: Option<usize>,
    pub impurity: Impurity,
    pub bootstrap: bool,
    // Network
    pub blocks: usize,
    pub layer_size: usize,
    pub conv_blocks: usize,
    pub conv_filters: usize,
    pub patch_side: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub loss_rule: LossRule,
    /// L1 regularization strength (left at 0: it did not improve results).
    pub l1: f64,
    /// Variance of the Gaussian label noise (the tables report sigma^2).
    pub noise_sigma2: f64,
    pub resample_noise: bool,
    pub kernels: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub early_stopping: EarlyStopMetric,
    /// Fixed epoch count for full-set training; otherwise derived from the
    /// cross-validation logs by the 2/3 rule.
    pub epochs_override: Option<usize>,
    // Linear regression
    pub stepwise_stop_tol: f64,
    // Climatology
    pub pooled_climatology: bool,
}

impl MethodParams {
    pub fn defaults(method: MethodId) -> Self {
        let mut p = Self {
            n_trees: 100,
            final_n_trees: 500,
            min_leaf: 30,
            max_features: None,
            impurity: Impurity::Mse,
            bootstrap: true,
            blocks: 2,
            layer_size: 106,
            conv_blocks: 3,
            conv_filters: 16,
            patch_side: 60,
            dropout: 0.030,
            batch_size: 256,
            learning_rate: 3.47e-3,
            decay: 0.0,
            loss_rule: LossRule::Nll,
            l1: 0.0,
            noise_sigma2: 0.0,
            resample_noise: true,
            kernels: 60,
            max_epochs: 60,
            patience: 5,
            early_stopping: EarlyStopMetric::Loss,
            epochs_override: None,
            stepwise_stop_tol: 1e-3,
            pooled_climatology: false,
        };
        match method {
            MethodId::Climatology | MethodId::Linreg => {}
            MethodId::Qrf => {
                p.min_leaf = 30;
            }
            MethodId::QrfLr => {
                p.min_leaf = 42;
            }
            MethodId::Nn => {
                p.blocks = 2;
                p.learning_rate = 3.47e-3;
                p.dropout = 0.030;
                p.decay = 5.0e6;
                p.noise_sigma2 = 0.0;
            }
            MethodId::NnLr => {
                p.blocks = 3;
                p.learning_rate = 1.57e-3;
                p.dropout = 0.188;
                p.decay = 8.4e4;
                p.noise_sigma2 = 0.315;
            }
            MethodId::CnnLr => {
                p.layer_size = 80;
                p.batch_size = 128;
                p.learning_rate = 7.283e-4;
                p.dropout = 0.0888;
                p.decay = 4.10e-7;
                p.noise_sigma2 = 0.322;
                p.loss_rule = LossRule::Nll;
                p.patch_side = 60;
            }
            MethodId::CnnLrKmn => {
                p.layer_size = 80;
                p.batch_size = 128;
                p.learning_rate = 5.3e-4;
                p.dropout = 0.072;
                p.decay = 4.098e-5;
                p.noise_sigma2 = 0.26218;
                p.loss_rule = LossRule::Crps;
                p.kernels = 60;
                p.patch_side = 60;
            }
            MethodId::CnnLrN0 => {
                p.layer_size = 60;
                p.batch_size = 128;
                p.learning_rate = 1.3e-3;
                p.dropout = 0.1028;
                p.decay = 2.633e-6;
                p.noise_sigma2 = 0.315;
                p.loss_rule = LossRule::Crps;
                p.patch_side = 100;
            }
        }
        p
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma2.max(0.0).sqrt()
    }
}

fn spec(v: VariableId, s: Statistic, h: usize) -> PredictorSpec {
    PredictorSpec::new(v, s, h).expect("builtin predictor specs are valid")
}

/// The bold Table-1 predictors as (mean, max, min) box statistics plus the
/// closest-grid-point surface roughness.
fn bold_mean_max_min() -> Vec<PredictorSpec> {
    let vars = [
        VariableId::WindDirSin,
        VariableId::WindDirCos,
        VariableId::WindSpeed10m,
        VariableId::WindU925,
        VariableId::WindV925,
        VariableId::MslPressure,
    ];
    let mut out = Vec::new();
    for v in vars {
        out.push(spec(v, Statistic::Mean, 2));
        out.push(spec(v, Statistic::Max, 2));
        out.push(spec(v, Statistic::Min, 2));
    }
    out.push(spec(VariableId::SurfaceRoughness, Statistic::Point, 0));
    out
}

/// Default predictor set of each method, following the selected models.
pub fn default_predictors(method: MethodId) -> Vec<PredictorSpec> {
    match method {
        MethodId::Climatology => Vec::new(),
        MethodId::Linreg => default_offset_predictors(),
        MethodId::Qrf | MethodId::QrfLr | MethodId::CnnLr | MethodId::CnnLrKmn | MethodId::CnnLrN0 => {
            bold_mean_max_min()
        }
        MethodId::Nn => vec![
            spec(VariableId::WindDirSin, Statistic::Mean, 2),
            spec(VariableId::WindDirSin, Statistic::Max, 2),
            spec(VariableId::WindDirCos, Statistic::Mean, 2),
            spec(VariableId::WindDirCos, Statistic::Max, 2),
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::WindSpeed10m, Statistic::Max, 2),
            spec(VariableId::SurfaceRoughness, Statistic::Point, 0),
        ],
        MethodId::NnLr => vec![
            spec(VariableId::WindDirSin, Statistic::Mean, 2),
            spec(VariableId::WindDirCos, Statistic::Mean, 2),
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::WindU925, Statistic::Mean, 2),
            spec(VariableId::WindV925, Statistic::Mean, 2),
            spec(VariableId::MslPressure, Statistic::Mean, 2),
            spec(VariableId::SurfaceRoughness, Statistic::Point, 0),
            spec(VariableId::WindSpeed10m, Statistic::Max, 2),
            spec(VariableId::WindSpeed10m, Statistic::Min, 2),
        ],
    }
}

/// Offset regression predictors: means of 10 m wind speed and the 925 hPa
/// components over the 12.5 km box, plus point surface roughness.
pub fn default_offset_predictors() -> Vec<PredictorSpec> {
    vec![
        spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
        spec(VariableId::SurfaceRoughness, Statistic::Point, 0),
        spec(VariableId::WindU925, Statistic::Mean, 2),
        spec(VariableId::WindV925, Statistic::Mean, 2),
    ]
}
