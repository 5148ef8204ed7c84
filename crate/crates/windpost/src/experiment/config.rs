//! Flat `key = value` config files with `#` comments and `[section]` headers.
//! Repeated keys accumulate in order (used for predictor lists).

use super::{default_offset_predictors, default_predictors, EarlyStopMetric, MethodId, MethodParams};
use crate::data::PredictorSpec;
use crate::error::{Error, Result};
use crate::heads::LossRule;
use crate::qrf::Impurity;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Parsed config text: ordered global pairs plus per-section ordered pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub globals: Vec<(String, String)>,
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RawConfig> {
        let mut cfg = RawConfig::default();
        let mut section: Option<String> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.split_once('#') {
                Some((head, _)) => head.trim(),
                None => raw_line.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                cfg.sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::FormatError {
                    file: origin.to_string(),
                    message: format!("line {}: expected `key = value`, got {raw_line:?}", lineno + 1),
                });
            };
            let pair = (key.trim().to_string(), value.trim().to_string());
            match &section {
                None => cfg.globals.push(pair),
                Some(s) => cfg.sections.get_mut(s).unwrap().push(pair),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get<'a>(&'a self, key: &str) -> Option<&'a str> {
        self.globals
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &str) -> Vec<&'a str> {
        self.globals
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    pub fn section<'a>(&'a self, name: &str) -> Option<&'a [(String, String)]> {
        self.sections.get(name).map(Vec::as_slice)
    }

    fn section_get<'a>(&'a self, name: &str, key: &str) -> Option<&'a str> {
        self.sections
            .get(name)?
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Full experiment description: dataset paths, method, predictors, seeds,
/// and the method's hyperparameters.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub test_dataset: Option<PathBuf>,
    pub method: MethodId,
    pub seed: u64,
    pub predictors: Vec<PredictorSpec>,
    pub offset_predictors: Vec<PredictorSpec>,
    pub params: MethodParams,
}

impl ExperimentConfig {
    /// Programmatic constructor with the method's shipped defaults.
    pub fn with_defaults(method: MethodId, dataset: PathBuf, seed: u64) -> Self {
        Self {
            dataset,
            test_dataset: None,
            method,
            seed,
            predictors: default_predictors(method),
            offset_predictors: default_offset_predictors(),
            params: MethodParams::defaults(method),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = RawConfig::load(path)?;
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let method = MethodId::parse(
            raw.get("method")
                .ok_or_else(|| Error::ConfigError("config is missing `method`".into()))?,
        )?;
        let mut cfg = Self::with_defaults(
            method,
            PathBuf::from(raw.get("dataset").unwrap_or("data/train")),
            parse_num(raw.get("seed").unwrap_or("0"), "seed")?,
        );
        cfg.test_dataset = raw.get("test_dataset").map(PathBuf::from);

        let preds = raw.get_all("predictor");
        if !preds.is_empty() {
            cfg.predictors = preds.iter().map(|s| PredictorSpec::parse(s)).collect::<Result<_>>()?;
        }
        let offs = raw.get_all("offset_predictor");
        if !offs.is_empty() {
            cfg.offset_predictors =
                offs.iter().map(|s| PredictorSpec::parse(s)).collect::<Result<_>>()?;
        }
        if let Some(pairs) = raw.section("method") {
            for (key, value) in pairs {
                cfg.set_param(key, value)?;
            }
        }
        Ok(cfg)
    }

    /// Apply one `key = value` to the method parameters (also used by the
    /// hyperparameter search to instantiate trials).
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.params;
        match key {
            "n_trees" => p.n_trees = parse_num(value, key)?,
            "final_n_trees" => p.final_n_trees = parse_num(value, key)?,
            "min_leaf" => p.min_leaf = parse_num(value, key)?,
            "max_features" => {
                p.max_features = if value == "all" { None } else { Some(parse_num(value, key)?) }
            }
            "impurity" => {
                p.impurity = match value {
                    "mse" => Impurity::Mse,
                    "mae" => Impurity::Mae,
                    other => return Err(Error::ConfigError(format!("unknown impurity {other:?}"))),
                }
            }
            "bootstrap" => p.bootstrap = parse_bool(value, key)?,
            "blocks" => p.blocks = parse_num(value, key)?,
            "layer_size" => p.layer_size = parse_num(value, key)?,
            "conv_blocks" => p.conv_blocks = parse_num(value, key)?,
            "conv_filters" => p.conv_filters = parse_num(value, key)?,
            "patch_side" => p.patch_side = parse_num(value, key)?,
            "dropout" => p.dropout = parse_num(value, key)?,
            "batch_size" => p.batch_size = parse_num(value, key)?,
            "learning_rate" => p.learning_rate = parse_num(value, key)?,
            "decay" => p.decay = parse_num(value, key)?,
            "loss" => p.loss_rule = LossRule::parse(value)?,
            "l1" => p.l1 = parse_num(value, key)?,
            "noise_sigma2" => p.noise_sigma2 = parse_num(value, key)?,
            "resample_noise" => p.resample_noise = parse_bool(value, key)?,
            "kernels" => p.kernels = parse_num(value, key)?,
            "max_epochs" => p.max_epochs = parse_num(value, key)?,
            "patience" => p.patience = parse_num(value, key)?,
            "early_stopping" => {
                p.early_stopping = match value {
                    "loss" => EarlyStopMetric::Loss,
                    "crps" => EarlyStopMetric::Crps,
                    other => {
                        return Err(Error::ConfigError(format!(
                            "unknown early stopping metric {other:?}"
                        )))
                    }
                }
            }
            "epochs" => p.epochs_override = Some(parse_num(value, key)?),
            "stepwise_stop_tol" => p.stepwise_stop_tol = parse_num(value, key)?,
            "pooled_climatology" => p.pooled_climatology = parse_bool(value, key)?,
            other => {
                return Err(Error::ConfigError(format!("unknown method parameter {other:?}")))
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ConfigError(format!("bad value {value:?} for {key}")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::ConfigError(format!("bad boolean {other:?} for {key}"))),
    }
}

/// One hyperparameter's sampling range.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamRange {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Int { low: i64, high: i64 },
    Categorical(Vec<String>),
}

/// Random-search space: parameter name -> range.
#[derive(Debug, Clone, Default)]
pub struct SearchSpace {
    pub params: Vec<(String, ParamRange)>,
}

impl SearchSpace {
    pub fn from_raw(raw: &RawConfig) -> Result<SearchSpace> {
        let mut params = Vec::new();
        for name in raw.sections.keys() {
            let Some(param) = name.strip_prefix("search.") else { continue };
            let kind = raw
                .section_get(name, "type")
                .ok_or_else(|| Error::ConfigError(format!("[{name}] is missing `type`")))?;
            let get_f = |key: &str| -> Result<f64> {
                parse_num(
                    raw.section_get(name, key)
                        .ok_or_else(|| Error::ConfigError(format!("[{name}] is missing `{key}`")))?,
                    key,
                )
            };
            let range = match kind {
                "uniform" => ParamRange::Uniform { low: get_f("low")?, high: get_f("high")? },
                "loguniform" => {
                    let (low, high) = (get_f("low")?, get_f("high")?);
                    if !(low > 0.0 && high > low) {
                        return Err(Error::ConfigError(format!(
                            "[{name}] log-uniform range must satisfy 0 < low < high"
                        )));
                    }
                    ParamRange::LogUniform { low, high }
                }
                "int" => ParamRange::Int {
                    low: get_f("low")? as i64,
                    high: get_f("high")? as i64,
                },
                "categorical" => {
                    let values = raw
                        .section_get(name, "values")
                        .ok_or_else(|| Error::ConfigError(format!("[{name}] is missing `values`")))?;
                    let vals: Vec<String> =
                        values.split_whitespace().map(|s| s.to_string()).collect();
                    if vals.is_empty() {
                        return Err(Error::ConfigError(format!("[{name}] has an empty value list")));
                    }
                    ParamRange::Categorical(vals)
                }
                other => {
                    return Err(Error::ConfigError(format!("[{name}] has unknown type {other:?}")))
                }
            };
            params.push((param.to_string(), range));
        }
        if params.is_empty() {
            return Err(Error::ConfigError("search space declares no [search.*] sections".into()));
        }
        Ok(SearchSpace { params })
    }

    pub fn load(path: &Path) -> Result<SearchSpace> {
        SearchSpace::from_raw(&RawConfig::load(path)?)
    }

    /// Write the space back out (used by the narrowing proposal).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, range) in &self.params {
            out.push_str(&format!("[search.{name}]\n"));
            match range {
                ParamRange::Uniform { low, high } => {
                    out.push_str(&format!("type = uniform\nlow = {low}\nhigh = {high}\n"));
                }
                ParamRange::LogUniform { low, high } => {
                    out.push_str(&format!("type = loguniform\nlow = {low}\nhigh = {high}\n"));
                }
                ParamRange::Int { low, high } => {
                    out.push_str(&format!("type = int\nlow = {low}\nhigh = {high}\n"));
                }
                ParamRange::Categorical(vals) => {
                    out.push_str(&format!("type = categorical\nvalues = {}\n", vals.join(" ")));
                }
            }
            out.push('\n');
        }
        out
    }
}
