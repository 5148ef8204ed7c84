//! Verification reports: per-case scores, Table-shaped summaries, Brier skill
//! curves with shared-resample bootstrap uncertainty, PIT and reliability
//! curve data, and per-station skill scores.

use crate::data::Dataset;
use crate::dist::math::seed_stream;
use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::scoring::{
    bootstrap_mean_std, brier, crps as crps_of, log_score, make_resamples, pit, pit_curve,
    reliability, ReliabilityBin, ScoreRecord, RELIABILITY_THRESHOLDS,
};
use chrono::NaiveDate;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Brier-skill thresholds: 0.5 m/s steps across the speed range of interest.
pub fn bss_threshold_grid() -> Vec<f64> {
    (1..=40).map(|k| k as f64 * 0.5).collect()
}

#[derive(Debug, Clone)]
pub struct CaseMeta {
    pub case: usize,
    pub station_id: u32,
    pub date: NaiveDate,
    pub observation: f64,
}

#[derive(Debug, Clone)]
pub struct MethodScores {
    pub method: String,
    pub records: Vec<ScoreRecord>,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: String,
    pub rmse_of_means: f64,
    pub mae_of_medians: f64,
    pub crps: f64,
    pub crps_bootstrap_std: f64,
    pub log_score: f64,
    pub crpss_vs_reference: f64,
}

#[derive(Debug, Clone)]
pub struct BssPoint {
    pub method: String,
    pub threshold: f64,
    pub bss: f64,
    pub bootstrap_std: f64,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub reference: String,
    pub cases: Vec<CaseMeta>,
    pub methods: Vec<MethodScores>,
    pub summaries: Vec<SummaryRow>,
    pub bss_curve: Vec<BssPoint>,
    pub pit_curves: Vec<(String, Vec<(f64, f64)>)>,
    /// (method, threshold, bins)
    pub reliability: Vec<(String, f64, Vec<ReliabilityBin>)>,
    pub station_crpss: Vec<(String, u32, f64)>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Caveats attached to the run (e.g. renormalized residual forecasts).
    pub notes: Vec<String>,
}

/// Score every method on the dataset and assemble the full report. The
/// reference method (for skill scores) must be among the supplied methods;
/// bootstrap resamples are shared across methods and thresholds.
pub fn verify(
    predictions: &[(String, Vec<PredictiveDistribution>)],
    dataset: &Dataset,
    reference: &str,
    n_resamples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if predictions.is_empty() {
        return Err(Error::DomainError("no prediction sets supplied".into()));
    }
    for (name, preds) in predictions {
        if preds.len() != dataset.cases.len() {
            return Err(Error::AlignmentError(format!(
                "method {name}: {} predictions for {} cases",
                preds.len(),
                dataset.cases.len()
            )));
        }
    }
    let ref_idx = predictions
        .iter()
        .position(|(name, _)| name == reference)
        .ok_or_else(|| {
            Error::ConfigError(format!("reference {reference:?} is not among the prediction sets"))
        })?;

    let cases: Vec<CaseMeta> = dataset
        .cases
        .iter()
        .enumerate()
        .map(|(i, c)| CaseMeta {
            case: i,
            station_id: c.station_id,
            date: c.init_time,
            observation: c.observation,
        })
        .collect();

    // Shared thresholds: reliability defaults plus the skill curve grid.
    let grid = bss_threshold_grid();
    let mut thresholds: Vec<f64> = RELIABILITY_THRESHOLDS.to_vec();
    for &t in &grid {
        if !thresholds.iter().any(|&x| (x - t).abs() < 1e-12) {
            thresholds.push(t);
        }
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Residual histogram/mixture forecasts reach speed space through
    // renormalization above 0 m/s; the report records which methods that
    // convention applies to.
    let mut notes: Vec<String> = Vec::new();
    for (name, preds) in predictions {
        let renormalized = preds
            .iter()
            .filter(|d| matches!(d, PredictiveDistribution::Shifted(_)))
            .count();
        if renormalized > 0 {
            notes.push(format!(
                "{name}: {renormalized} of {} forecasts are residual distributions renormalized above 0 m/s",
                preds.len()
            ));
        }
    }

    let mut methods = Vec::with_capacity(predictions.len());
    for (m, (name, preds)) in predictions.iter().enumerate() {
        let mut rng = seed_stream(seed, "pit", m as u64);
        let mut records = Vec::with_capacity(preds.len());
        for (i, (d, case)) in preds.iter().zip(&dataset.cases).enumerate() {
            let y = case.observation;
            let crps_val = crps_of(d, y)?;
            let mean = d.mean();
            let median = d.median();
            records.push(ScoreRecord {
                case: i,
                crps: crps_val,
                log_score: log_score(d, y),
                squared_error_of_mean: (mean - y) * (mean - y),
                absolute_error_of_median: (median - y).abs(),
                pit: pit(d, y, &mut rng),
                brier: thresholds.iter().map(|&t| (t, brier(d, y, t))).collect(),
            });
        }
        methods.push(MethodScores { method: name.clone(), records });
    }

    // Date grouping shared by every bootstrap computation.
    let mut date_groups: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for meta in &cases {
        date_groups.entry(meta.date).or_default().push(meta.case);
    }
    let groups: Vec<&Vec<usize>> = date_groups.values().collect();
    let resamples = make_resamples(groups.len(), n_resamples, seed);

    let values_by_date = |records: &[ScoreRecord], pick: &dyn Fn(&ScoreRecord) -> f64| -> Vec<Vec<f64>> {
        groups
            .iter()
            .map(|idx| idx.iter().map(|&i| pick(&records[i])).collect())
            .collect()
    };

    let ref_records = &methods[ref_idx].records;
    let ref_mean_crps = mean(ref_records.iter().map(|r| r.crps));

    let mut summaries = Vec::new();
    let mut bss_curve = Vec::new();
    let mut pit_curves = Vec::new();
    let mut reliability_rows = Vec::new();
    let mut station_rows = Vec::new();

    let pit_grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();

    for ms in &methods {
        let crps_by_date = values_by_date(&ms.records, &|r| r.crps);
        let boot = bootstrap_mean_std(&crps_by_date, &resamples, "crps");
        let mean_crps = mean(ms.records.iter().map(|r| r.crps));
        summaries.push(SummaryRow {
            method: ms.method.clone(),
            rmse_of_means: mean(ms.records.iter().map(|r| r.squared_error_of_mean)).sqrt(),
            mae_of_medians: mean(ms.records.iter().map(|r| r.absolute_error_of_median)),
            crps: mean_crps,
            crps_bootstrap_std: boot.std,
            log_score: mean(ms.records.iter().map(|r| r.log_score)),
            crpss_vs_reference: if ref_mean_crps == 0.0 {
                f64::NAN
            } else {
                1.0 - mean_crps / ref_mean_crps
            },
        });

        // Brier skill curve vs the reference with shared date resamples.
        for (t_idx, &t) in thresholds.iter().enumerate() {
            if !grid.iter().any(|&g| (g - t).abs() < 1e-12) {
                continue;
            }
            let b_m = values_by_date(&ms.records, &|r| r.brier[t_idx].1);
            let b_r = values_by_date(ref_records, &|r| r.brier[t_idx].1);
            let full_m: f64 = b_m.iter().flatten().sum();
            let full_r: f64 = b_r.iter().flatten().sum();
            let (bss, std) = if full_r == 0.0 {
                (f64::NAN, f64::NAN)
            } else {
                let point = 1.0 - full_m / full_r;
                let mut draws = Vec::with_capacity(resamples.len());
                for draw in &resamples {
                    let mut sm = 0.0;
                    let mut sr = 0.0;
                    for &g in draw {
                        sm += b_m[g as usize].iter().sum::<f64>();
                        sr += b_r[g as usize].iter().sum::<f64>();
                    }
                    if sr > 0.0 {
                        draws.push(1.0 - sm / sr);
                    }
                }
                let std = if draws.len() > 1 && !draws.windows(2).all(|w| w[0] == w[1]) {
                    let m = mean(draws.iter().copied());
                    (draws.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                        / (draws.len() as f64 - 1.0))
                        .sqrt()
                } else {
                    0.0
                };
                (point, std)
            };
            bss_curve.push(BssPoint { method: ms.method.clone(), threshold: t, bss, bootstrap_std: std });
        }

        let pits: Vec<f64> = ms.records.iter().map(|r| r.pit).collect();
        pit_curves.push((ms.method.clone(), pit_curve(&pits, &pit_grid)));

        for &t in &RELIABILITY_THRESHOLDS {
            let t_idx = thresholds.iter().position(|&x| (x - t).abs() < 1e-12).unwrap();
            let probs: Vec<f64> = ms
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    // Reconstruct P(exceed) from the Brier decomposition:
                    // brier = (p - o)^2 with o known from the observation.
                    let o = cases[i].observation > t;
                    let b = r.brier[t_idx].1.max(0.0);
                    let root = b.sqrt();
                    if o {
                        (1.0 - root).clamp(0.0, 1.0)
                    } else {
                        root.clamp(0.0, 1.0)
                    }
                })
                .collect();
            let outcomes: Vec<bool> = cases.iter().map(|c| c.observation > t).collect();
            reliability_rows.push((ms.method.clone(), t, reliability(&probs, &outcomes, 10)?));
        }

        // Per-station CRPSS vs the reference.
        let mut stations: Vec<u32> = cases.iter().map(|c| c.station_id).collect();
        stations.sort_unstable();
        stations.dedup();
        for sid in stations {
            let m_scores: Vec<f64> = ms
                .records
                .iter()
                .zip(&cases)
                .filter(|(_, c)| c.station_id == sid)
                .map(|(r, _)| r.crps)
                .collect();
            let r_scores: Vec<f64> = ref_records
                .iter()
                .zip(&cases)
                .filter(|(_, c)| c.station_id == sid)
                .map(|(r, _)| r.crps)
                .collect();
            let rm = mean(r_scores.iter().copied());
            let value = if rm == 0.0 { f64::NAN } else { 1.0 - mean(m_scores.iter().copied()) / rm };
            station_rows.push((ms.method.clone(), sid, value));
        }
    }

    Ok(VerificationReport {
        reference: reference.to_string(),
        cases,
        methods,
        summaries,
        bss_curve,
        pit_curves,
        reliability: reliability_rows,
        station_crpss: station_rows,
        bootstrap_resamples: n_resamples,
        seed,
        notes,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Write every report file the CLI documents.
pub fn write_report(report: &VerificationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let scores_path = dir.join("scores.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&scores_path)?);
        writeln!(
            w,
            "method,case,station_id,init_date,observation,crps,log_score,squared_error_of_mean,absolute_error_of_median,pit,brier_5,brier_10,brier_15"
        )?;
        for ms in &report.methods {
            for (r, c) in ms.records.iter().zip(&report.cases) {
                let b = |t: f64| {
                    r.brier
                        .iter()
                        .find(|(x, _)| (x - t).abs() < 1e-12)
                        .map(|(_, v)| *v)
                        .unwrap_or(f64::NAN)
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    ms.method,
                    c.case,
                    c.station_id,
                    c.date,
                    c.observation,
                    r.crps,
                    r.log_score,
                    r.squared_error_of_mean,
                    r.absolute_error_of_median,
                    r.pit,
                    b(5.0),
                    b(10.0),
                    b(15.0)
                )?;
            }
        }
        w.flush()?;
    }
    written.push(scores_path);

    let summary_path = dir.join("summary.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
        writeln!(w, "method,rmse,mae,crps,crps_bootstrap_std,log_score,crpss_vs_{}", report.reference)?;
        for s in &report.summaries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.method,
                s.rmse_of_means,
                s.mae_of_medians,
                s.crps,
                s.crps_bootstrap_std,
                s.log_score,
                s.crpss_vs_reference
            )?;
        }
        w.flush()?;
    }
    written.push(summary_path);

    let bss_path = dir.join("bss_curve.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&bss_path)?);
        writeln!(w, "method,threshold,bss_vs_{},bootstrap_std", report.reference)?;
        for p in &report.bss_curve {
            writeln!(w, "{},{},{},{}", p.method, p.threshold, p.bss, p.bootstrap_std)?;
        }
        w.flush()?;
    }
    written.push(bss_path);

    let pit_path = dir.join("pit.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&pit_path)?);
        writeln!(w, "method,tau,empirical_fraction")?;
        for (method, curve) in &report.pit_curves {
            for (tau, frac) in curve {
                writeln!(w, "{method},{tau},{frac}")?;
            }
        }
        w.flush()?;
    }
    written.push(pit_path);

    for &t in &RELIABILITY_THRESHOLDS {
        let path = dir.join(format!("reliability_{}.csv", t as i64));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "method,bin_lo,bin_hi,mean_forecast,observed_frequency,count")?;
        for (method, threshold, bins) in &report.reliability {
            if (threshold - t).abs() > 1e-12 {
                continue;
            }
            for b in bins {
                writeln!(
                    w,
                    "{method},{},{},{},{},{}",
                    b.lo, b.hi, b.mean_forecast, b.observed_frequency, b.count
                )?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    if !report.notes.is_empty() {
        let notes_path = dir.join("notes.txt");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&notes_path)?);
        for note in &report.notes {
            writeln!(w, "{note}")?;
        }
        w.flush()?;
        written.push(notes_path);
    }

    let station_path = dir.join("station_crpss.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&station_path)?);
        writeln!(w, "method,station_id,crpss_vs_{}", report.reference)?;
        for (method, sid, v) in &report.station_crpss {
            writeln!(w, "{method},{sid},{v}")?;
        }
        w.flush()?;
    }
    written.push(station_path);

    Ok(written)
}
