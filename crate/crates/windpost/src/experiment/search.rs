//! Random hyperparameter search with manual range narrowing: trials sample
//! the space i.i.d., are scored by cross-validation mean CRPS, and a
//! narrowing pass proposes the central half of the top quartile per
//! parameter for the next round.

use super::config::{ParamRange, SearchSpace};
use super::cv::run_cv;
use super::ExperimentConfig;
use crate::data::Dataset;
use crate::dist::math::{seed_stream, uniform_open01};
use crate::error::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub assignments: Vec<(String, String)>,
    pub mean_crps: f64,
    pub fold_crps: Vec<f64>,
}

/// Sample one assignment per parameter from the trial's own RNG stream.
pub fn sample_assignments(space: &SearchSpace, master_seed: u64, trial: usize) -> Vec<(String, String)> {
    let mut rng = seed_stream(master_seed, "trial", trial as u64);
    space
        .params
        .iter()
        .map(|(name, range)| {
            let value = match range {
                ParamRange::Uniform { low, high } => {
                    format!("{}", low + uniform_open01(&mut rng) * (high - low))
                }
                ParamRange::LogUniform { low, high } => {
                    let v = (low.ln() + uniform_open01(&mut rng) * (high / low).ln()).exp();
                    format!("{v}")
                }
                ParamRange::Int { low, high } => format!("{}", rng.random_range(*low..=*high)),
                ParamRange::Categorical(values) => {
                    values[rng.random_range(0..values.len())].clone()
                }
            };
            (name.clone(), value)
        })
        .collect()
}

/// Run `budget` random trials, each evaluated by cross-validation mean CRPS,
/// and return them ranked best first. Trials run concurrently; seeds derive
/// from (master seed, trial index), so concurrency does not change results.
pub fn random_search(
    space: &SearchSpace,
    template: &ExperimentConfig,
    dataset: &Dataset,
    budget: usize,
    out: Option<&Path>,
) -> Result<Vec<TrialResult>> {
    if budget == 0 {
        return Err(Error::ConfigError("search budget must be at least 1".into()));
    }
    let attempts: Vec<(usize, std::result::Result<TrialResult, String>)> = (0..budget)
        .into_par_iter()
        .map(|trial| {
            let assignments = sample_assignments(space, template.seed, trial);
            let run = || -> Result<TrialResult> {
                let mut cfg = template.clone();
                cfg.seed = seed_stream(template.seed, "trial-train-seed", trial as u64).random();
                for (key, value) in &assignments {
                    cfg.set_param(key, value)?;
                }
                let outcomes = run_cv(&cfg, dataset, &[], None)?;
                let fold_crps: Vec<f64> = outcomes.iter().map(|o| o.validation_crps).collect();
                let mean_crps = fold_crps.iter().sum::<f64>() / fold_crps.len() as f64;
                Ok(TrialResult { trial, assignments: assignments.clone(), mean_crps, fold_crps })
            };
            (trial, run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (trial, attempt) in attempts {
        match attempt {
            Ok(r) => results.push(r),
            Err(e) => failures.push(format!("trial {trial}: {e}")),
        }
    }
    if results.is_empty() {
        return Err(Error::SearchFailed(failures.join("; ")));
    }
    results.sort_by(|a, b| a.mean_crps.partial_cmp(&b.mean_crps).unwrap());

    if let Some(path) = out {
        write_trials(path, &results)?;
    }
    Ok(results)
}

pub fn write_trials(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "trial,mean_crps,fold_crps,assignments")?;
    for t in trials {
        let folds: Vec<String> = t.fold_crps.iter().map(|v| format!("{v}")).collect();
        let assigns: Vec<String> =
            t.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(w, "{},{},{},{}", t.trial, t.mean_crps, folds.join("|"), assigns.join(";"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialResult>> {
    let err = |m: String| Error::FormatError { file: path.display().to_string(), message: m };
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(4, ',').collect();
        if parts.len() != 4 {
            return Err(err(format!("line {}: expected 4 fields", lineno + 1)));
        }
        let trial = parts[0].parse().map_err(|_| err(format!("line {}: bad trial", lineno + 1)))?;
        let mean_crps =
            parts[1].parse().map_err(|_| err(format!("line {}: bad score", lineno + 1)))?;
        let fold_crps = parts[2]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| err(format!("line {}: bad fold score", lineno + 1))))
            .collect::<Result<Vec<f64>>>()?;
        let assignments = parts[3]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| err(format!("line {}: bad assignment {kv:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(TrialResult { trial, assignments, mean_crps, fold_crps });
    }
    Ok(out)
}

/// Propose a narrowed space: per numeric parameter the central 50% of the
/// top-quartile values, clipped to the original range; categorical parameters
/// keep the values that appear in the top quartile. Narrowing is a proposal
/// for the operator, not an automatic step.
pub fn narrow_space(space: &SearchSpace, trials: &[TrialResult]) -> Result<SearchSpace> {
    if trials.is_empty() {
        return Err(Error::DomainError("no trials to narrow from".into()));
    }
    let mut ranked = trials.to_vec();
    ranked.sort_by(|a, b| a.mean_crps.partial_cmp(&b.mean_crps).unwrap());
    let top = &ranked[..ranked.len().div_ceil(4)];

    let mut params = Vec::with_capacity(space.params.len());
    for (name, range) in &space.params {
        let values: Vec<&str> = top
            .iter()
            .filter_map(|t| {
                t.assignments
                    .iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| v.as_str())
            })
            .collect();
        if values.is_empty() {
            params.push((name.clone(), range.clone()));
            continue;
        }
        let narrowed = match range {
            ParamRange::Uniform { low, high } => {
                let (lo, hi) = central_half(&parse_all(&values)?, *low, *high);
                ParamRange::Uniform { low: lo, high: hi }
            }
            ParamRange::LogUniform { low, high } => {
                let (lo, hi) = central_half(&parse_all(&values)?, *low, *high);
                ParamRange::LogUniform { low: lo.max(*low), high: hi }
            }
            ParamRange::Int { low, high } => {
                let (lo, hi) = central_half(&parse_all(&values)?, *low as f64, *high as f64);
                let lo = lo.round() as i64;
                let hi = (hi.round() as i64).max(lo);
                ParamRange::Int { low: lo, high: hi }
            }
            ParamRange::Categorical(original) => {
                let kept: Vec<String> = original
                    .iter()
                    .filter(|v| values.contains(&v.as_str()))
                    .cloned()
                    .collect();
                ParamRange::Categorical(if kept.is_empty() { original.clone() } else { kept })
            }
        };
        params.push((name.clone(), narrowed));
    }
    Ok(SearchSpace { params })
}

fn parse_all(values: &[&str]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::DomainError(format!("non-numeric trial value {s:?}")))
        })
        .collect()
}

/// 25th-75th percentile band (linear interpolation), clipped into [lo, hi].
fn central_half(values: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        if v.len() == 1 {
            return v[0];
        }
        let pos = p * (v.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < v.len() {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        } else {
            v[i]
        }
    };
    let mut a = q(0.25).clamp(lo, hi);
    let mut b = q(0.75).clamp(lo, hi);
    if b <= a {
        // Degenerate quartile: keep a tiny valid interval around the value.
        let pad = (a.abs() * 1e-6).max(1e-12);
        a = (a - pad).max(lo);
        b = (b + pad).min(hi);
        if b <= a {
            b = hi.min(a + pad);
        }
    }
    (a, b)
}
