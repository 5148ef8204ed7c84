//! Scoring rules and verification statistics: CRPS (closed forms and numeric
//! oracle), interval log score, Brier score and skill, PIT, reliability
//! curves, skill scores, and block-bootstrap uncertainty.

pub mod bootstrap;
pub mod crps;
pub mod numeric;

pub use bootstrap::{block_bootstrap, bootstrap_mean_std, make_resamples, BootstrapSummary};
pub use crps::{crps, crps_empirical, crps_histogram, crps_mixture, crps_truncnorm};
pub use numeric::crps_numeric;

use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};
use rand::Rng;

/// Per-case verification record for one method.
#[derive(Debug, Clone)]
pub struct ScoreRecord {
    pub case: usize,
    pub crps: f64,
    pub log_score: f64,
    pub squared_error_of_mean: f64,
    pub absolute_error_of_median: f64,
    pub pit: f64,
    pub brier: Vec<(f64, f64)>,
}

/// Interval log score for observations rounded to whole m/s:
/// -log of the width-normalized forecast mass on [max(y-1/2, 0), y+1/2).
/// Zero mass yields +inf, which is reported rather than raised, so
/// step-function forecasts and climatology remain scorable.
pub fn log_score(dist: &PredictiveDistribution, y: f64) -> f64 {
    let lo = (y - 0.5).max(0.0);
    let hi = y + 0.5;
    let w = hi - lo;
    let mass = dist.cdf(hi) - dist.cdf(lo);
    if mass <= 0.0 || w <= 0.0 {
        f64::INFINITY
    } else {
        -(mass / w).ln()
    }
}

/// Brier score of the exceedance forecast at `threshold`.
pub fn brier(dist: &PredictiveDistribution, y: f64, threshold: f64) -> f64 {
    let p = 1.0 - dist.cdf(threshold);
    let o = if y > threshold { 1.0 } else { 0.0 };
    (p - o) * (p - o)
}

/// Brier skill score, 1 - mean(brier) / mean(brier_ref).
pub fn brier_skill(scores: &[f64], reference: &[f64]) -> Result<f64> {
    skill_score(scores, reference)
}

/// CRPS skill score, 1 - mean(crps) / mean(crps_ref).
pub fn crpss(scores: &[f64], reference: &[f64]) -> Result<f64> {
    skill_score(scores, reference)
}

fn skill_score(scores: &[f64], reference: &[f64]) -> Result<f64> {
    if scores.len() != reference.len() || scores.is_empty() {
        return Err(Error::AlignmentError(format!(
            "score sets of length {} and {}",
            scores.len(),
            reference.len()
        )));
    }
    let m = scores.iter().sum::<f64>() / scores.len() as f64;
    let r = reference.iter().sum::<f64>() / reference.len() as f64;
    if r == 0.0 {
        return Err(Error::UndefinedSkill);
    }
    Ok(1.0 - m / r)
}

/// Probability integral transform, randomized uniformly across CDF jumps so
/// discrete forecasts calibrate against a uniform reference.
pub fn pit<R: Rng + ?Sized>(dist: &PredictiveDistribution, y: f64, rng: &mut R) -> f64 {
    let hi = dist.cdf(y);
    let lo = dist.cdf_left(y);
    if hi - lo > 0.0 {
        lo + crate::dist::math::uniform_open01(rng) * (hi - lo)
    } else {
        hi
    }
}

/// Empirical CDF of PIT values on a quantile grid.
pub fn pit_curve(pits: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = pits.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&tau| {
            let k = sorted.partition_point(|&p| p <= tau);
            (tau, k as f64 / n)
        })
        .collect()
}

/// One reliability-diagram bin.
#[derive(Debug, Clone)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_forecast: f64,
    /// Observed event frequency; NaN marks an empty bin.
    pub observed_frequency: f64,
    pub count: usize,
}

/// Reliability diagram data: forecast probabilities binned on the unit
/// interval, with the
/// mean forecast, observed frequency, and count (sharpness) per bin.
pub fn reliability(probs: &[f64], outcomes: &[bool], prob_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if probs.len() != outcomes.len() {
        return Err(Error::AlignmentError("probability and outcome lengths differ".into()));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::DomainError("forecast probabilities must lie in [0,1]".into()));
    }
    let mut sums = vec![0.0; prob_bins];
    let mut hits = vec![0usize; prob_bins];
    let mut counts = vec![0usize; prob_bins];
    for (&p, &o) in probs.iter().zip(outcomes) {
        let mut b = (p * prob_bins as f64) as usize;
        if b == prob_bins {
            b -= 1;
        }
        sums[b] += p;
        counts[b] += 1;
        if o {
            hits[b] += 1;
        }
    }
    Ok((0..prob_bins)
        .map(|b| ReliabilityBin {
            lo: b as f64 / prob_bins as f64,
            hi: (b + 1) as f64 / prob_bins as f64,
            mean_forecast: if counts[b] > 0 { sums[b] / counts[b] as f64 } else { f64::NAN },
            observed_frequency: if counts[b] > 0 {
                hits[b] as f64 / counts[b] as f64
            } else {
                f64::NAN
            },
            count: counts[b],
        })
        .collect())
}

/// Default exceedance thresholds for reliability diagrams (m/s).
pub const RELIABILITY_THRESHOLDS: [f64; 3] = [5.0, 10.0, 15.0];

/// RMSE of the predictive means against observations.
pub fn rmse_of_means(means: &[f64], obs: &[f64]) -> Result<f64> {
    if means.len() != obs.len() || means.is_empty() {
        return Err(Error::AlignmentError("mean and observation lengths differ".into()));
    }
    let s: f64 = means.iter().zip(obs).map(|(m, y)| (m - y) * (m - y)).sum();
    Ok((s / means.len() as f64).sqrt())
}

/// MAE of the predictive medians against observations.
pub fn mae_of_medians(medians: &[f64], obs: &[f64]) -> Result<f64> {
    if medians.len() != obs.len() || medians.is_empty() {
        return Err(Error::AlignmentError("median and observation lengths differ".into()));
    }
    Ok(medians.iter().zip(obs).map(|(m, y)| (m - y).abs()).sum::<f64>() / medians.len() as f64)
}

/// Score one case against a forecast distribution.
pub fn score_case<R: Rng + ?Sized>(
    case: usize,
    dist: &PredictiveDistribution,
    y: f64,
    thresholds: &[f64],
    rng: &mut R,
) -> Result<ScoreRecord> {
    let crps_val = crps::crps(dist, y)?;
    let mean = dist.mean();
    let median = dist.median();
    Ok(ScoreRecord {
        case,
        crps: crps_val,
        log_score: log_score(dist, y),
        squared_error_of_mean: (mean - y) * (mean - y),
        absolute_error_of_median: (median - y).abs(),
        pit: pit(dist, y, rng),
        brier: thresholds.iter().map(|&t| (t, brier(dist, y, t))).collect(),
    })
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against Uniform(0,1).
pub fn ks_statistic_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &p) in s.iter().enumerate() {
        d = d.max(((i + 1) as f64 / n - p).abs());
        d = d.max((p - i as f64 / n).abs());
    }
    d
}

/// Asymptotic p-value of the KS statistic (Stephens' small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}
