//! Block bootstrap over dates: a resample draws whole dates with replacement
//! and keeps every station of each drawn date, respecting spatial correlation.

use crate::dist::math::seed_stream;
use crate::error::{Error, Result};
use chrono::NaiveDate;
use rand::Rng;
use std::collections::BTreeMap;

/// Bootstrap summary for one statistic.
#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub statistic: String,
    pub point_estimate: f64,
    pub std: f64,
    pub resamples: usize,
}

/// Date index draws shared by every method so skill differences see the same
/// resampling noise. `resamples[r][k]` indexes into the caller's date list.
pub fn make_resamples(n_dates: usize, n_resamples: usize, seed: u64) -> Vec<Vec<u32>> {
    (0..n_resamples)
        .map(|r| {
            let mut rng = seed_stream(seed, "block-bootstrap", r as u64);
            (0..n_dates).map(|_| rng.random_range(0..n_dates as u32)).collect()
        })
        .collect()
}

/// Mean-statistic bootstrap given per-date value groups and shared resamples.
pub fn bootstrap_mean_std(values_by_date: &[Vec<f64>], resamples: &[Vec<u32>], name: &str) -> BootstrapSummary {
    let per_date: Vec<(f64, f64)> = values_by_date
        .iter()
        .map(|v| (v.iter().sum::<f64>(), v.len() as f64))
        .collect();
    let total: f64 = per_date.iter().map(|(s, _)| s).sum();
    let count: f64 = per_date.iter().map(|(_, c)| c).sum();
    let point = total / count;

    let stats: Vec<f64> = resamples
        .iter()
        .map(|draw| {
            let mut s = 0.0;
            let mut c = 0.0;
            for &i in draw {
                let (ds, dc) = per_date[i as usize];
                s += ds;
                c += dc;
            }
            s / c
        })
        .collect();
    let n = stats.len() as f64;
    let all_equal = stats.windows(2).all(|w| w[0] == w[1]);
    let mean = stats.iter().sum::<f64>() / n;
    let var = if stats.len() > 1 && !all_equal {
        stats.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    BootstrapSummary {
        statistic: name.to_string(),
        point_estimate: point,
        std: var.sqrt(),
        resamples: stats.len(),
    }
}

/// Block bootstrap of the mean of per-case scores keyed by date.
pub fn block_bootstrap(
    scores: &[(NaiveDate, f64)],
    n_resamples: usize,
    seed: u64,
    name: &str,
) -> Result<BootstrapSummary> {
    if scores.is_empty() {
        return Err(Error::DomainError("block bootstrap of an empty score set".into()));
    }
    let mut groups: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for &(d, v) in scores {
        groups.entry(d).or_default().push(v);
    }
    let values_by_date: Vec<Vec<f64>> = groups.into_values().collect();
    let resamples = make_resamples(values_by_date.len(), n_resamples, seed);
    Ok(bootstrap_mean_std(&values_by_date, &resamples, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 10, 1).unwrap() + chrono::Days::new(n as u64)
    }

    #[test]
    fn constant_scores_have_zero_std() {
        let scores: Vec<(NaiveDate, f64)> =
            (0..20).flat_map(|d| (0..5).map(move |_| (day(d), 0.8))).collect();
        let s = block_bootstrap(&scores, 1000, 7, "crps").unwrap();
        assert_eq!(s.std, 0.0);
        assert!((s.point_estimate - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_date_resampling_matches_closed_form() {
        // Two dates with equal case counts and mean scores a, b. A resample
        // draws 2 dates with replacement: statistic is a, (a+b)/2, or b with
        // probabilities 1/4, 1/2, 1/4; the std of that distribution is
        // |b - a| / (2 sqrt(2)).
        let (a, b) = (0.2, 1.4);
        let mut scores = Vec::new();
        for _ in 0..4 {
            scores.push((day(0), a));
            scores.push((day(1), b));
        }
        let n = 4000;
        let s = block_bootstrap(&scores, n, 99, "crps").unwrap();
        let exact = (b - a) / (2.0 * std::f64::consts::SQRT_2);
        // Monte-Carlo tolerance: the std of a std estimate over n draws.
        let tol = 4.0 * exact / (2.0 * (n as f64).sqrt());
        assert!(
            (s.std - exact).abs() < tol,
            "bootstrap std {} vs analytic {exact} (tol {tol})",
            s.std
        );
    }

    #[test]
    fn fixed_seed_reproduces_summary() {
        let scores: Vec<(NaiveDate, f64)> = (0..30)
            .flat_map(|d| (0..3).map(move |k| (day(d), (d * 3 + k) as f64 * 0.01)))
            .collect();
        let s1 = block_bootstrap(&scores, 500, 1234, "crps").unwrap();
        let s2 = block_bootstrap(&scores, 500, 1234, "crps").unwrap();
        assert_eq!(s1.point_estimate.to_bits(), s2.point_estimate.to_bits());
        assert_eq!(s1.std.to_bits(), s2.std.to_bits());
        let s3 = block_bootstrap(&scores, 500, 1235, "crps").unwrap();
        assert_ne!(s1.std.to_bits(), s3.std.to_bits());
    }

    #[test]
    fn empty_input_is_a_domain_error() {
        assert!(matches!(
            block_bootstrap(&[], 10, 1, "crps"),
            Err(Error::DomainError(_))
        ));
    }
}
