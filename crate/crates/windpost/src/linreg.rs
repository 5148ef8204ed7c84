//! Ordinary least squares with forward stepwise predictor selection. The
//! fitted model supplies the per-case offsets and residual targets that the
//! residual-trained models build on.

use crate::data::{extract_features, Dataset, PredictorSpec};
use crate::error::{Error, Result};

/// OLS model over a set of predictor specs. Features are standardized
/// internally for conditioning; coefficients are reported in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub specs: Vec<PredictorSpec>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub training_mse: f64,
}

impl LinearModel {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(features)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    pub fn predict_case(&self, case: &crate::data::ForecastCase) -> Result<f64> {
        Ok(self.predict_row(&extract_features(case, &self.specs)?))
    }
}

/// Least-squares fit of `y` on the rows of `x` (one row per sample), solved
/// via the normal equations with a Cholesky factorization on standardized
/// features.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64], specs: &[PredictorSpec]) -> Result<LinearModel> {
    let n = x.len();
    let p = specs.len();
    if n == 0 || y.len() != n {
        return Err(Error::DomainError("design matrix and target lengths differ".into()));
    }
    if x.iter().any(|row| row.len() != p) {
        return Err(Error::DomainError("design matrix width does not match the specs".into()));
    }
    if n <= p {
        return Err(Error::SingularDesign);
    }

    // Standardize columns; a constant column is collinear with the intercept.
    let mut means = vec![0.0; p];
    let mut stds = vec![0.0; p];
    for j in 0..p {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n as f64;
        means[j] = m;
        stds[j] = v.sqrt();
        if stds[j] <= 1e-12 * (1.0 + m.abs()) {
            return Err(Error::SingularDesign);
        }
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;

    // Normal equations on the centered, scaled system.
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..p).map(|j| (row[j] - means[j]) / stds[j]).collect();
        for j in 0..p {
            b[j] += z[j] * (yi - y_mean);
            for k in j..p {
                a[j * p + k] += z[j] * z[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[j * p + k] = a[k * p + j];
        }
    }

    let beta_std = cholesky_solve(&a, &b, p)?;
    let coefficients: Vec<f64> = (0..p).map(|j| beta_std[j] / stds[j]).collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();

    let mse = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let f = intercept + coefficients.iter().zip(row).map(|(c, v)| c * v).sum::<f64>();
            (yi - f) * (yi - f)
        })
        .sum::<f64>()
        / n as f64;

    Ok(LinearModel { specs: specs.to_vec(), coefficients, intercept, training_mse: mse })
}

/// Solve the symmetric positive-definite system `a x = b`.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if d <= 1e-10 * a[j * p + j].max(1e-300) {
            return Err(Error::SingularDesign);
        }
        l[j * p + j] = d.sqrt();
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / l[j * p + j];
        }
    }
    // Forward then back substitution.
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    let mut xout = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * xout[k];
        }
        xout[i] = s / l[i * p + i];
    }
    Ok(xout)
}

/// Fit a linear model on the dataset's extracted features.
pub fn fit_linear_model(dataset: &Dataset, specs: &[PredictorSpec]) -> Result<LinearModel> {
    let x: Result<Vec<Vec<f64>>> =
        dataset.cases.iter().map(|c| extract_features(c, specs)).collect();
    let y: Vec<f64> = dataset.cases.iter().map(|c| c.observation).collect();
    fit_ols(&x?, &y, specs)
}

/// Greedy forward stepwise selection: repeatedly add the candidate with the
/// largest MSE reduction, stop when the relative reduction falls below
/// `stop_tol`. Ties break toward the earliest candidate.
pub fn forward_stepwise(
    candidates: &[PredictorSpec],
    dataset: &Dataset,
    stop_tol: f64,
) -> Result<LinearModel> {
    if candidates.is_empty() {
        return Err(Error::ConfigError("forward stepwise needs at least one candidate".into()));
    }
    let all_x: Result<Vec<Vec<f64>>> =
        dataset.cases.iter().map(|c| extract_features(c, candidates)).collect();
    let all_x = all_x?;
    let y: Vec<f64> = dataset.cases.iter().map(|c| c.observation).collect();
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut current_mse = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;

    let mut selected: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<(usize, LinearModel)> = None;
        for (c, _) in candidates.iter().enumerate() {
            if selected.contains(&c) {
                continue;
            }
            let cols: Vec<usize> = selected.iter().copied().chain(std::iter::once(c)).collect();
            let x: Vec<Vec<f64>> =
                all_x.iter().map(|row| cols.iter().map(|&j| row[j]).collect()).collect();
            let specs: Vec<PredictorSpec> = cols.iter().map(|&j| candidates[j]).collect();
            match fit_ols(&x, &y, &specs) {
                Ok(model) => {
                    if best.as_ref().is_none_or(|(_, b)| model.training_mse < b.training_mse) {
                        best = Some((c, model));
                    }
                }
                // Collinear candidates are simply not selectable this round.
                Err(Error::SingularDesign) => continue,
                Err(e) => return Err(e),
            }
        }
        let Some((c, model)) = best else { break };
        let reduction = (current_mse - model.training_mse) / current_mse.max(1e-300);
        if reduction < stop_tol {
            break;
        }
        selected.push(c);
        current_mse = model.training_mse;
        if selected.len() == candidates.len() {
            break;
        }
    }

    if selected.is_empty() {
        // Nothing reduced the MSE: the model is the intercept-only forecast.
        return Ok(LinearModel {
            specs: Vec::new(),
            coefficients: Vec::new(),
            intercept: y_mean,
            training_mse: current_mse,
        });
    }
    let cols = selected;
    let x: Vec<Vec<f64>> = all_x.iter().map(|row| cols.iter().map(|&j| row[j]).collect()).collect();
    let specs: Vec<PredictorSpec> = cols.iter().map(|&j| candidates[j]).collect();
    fit_ols(&x, &y, &specs)
}

/// Per-case residual target and offset. The residual is nudged to the
/// representable value that makes `r + f` reproduce the observation exactly;
/// when the residual's ulp exceeds the observation's no such value exists and
/// the reconstruction is off by at most one ulp of the larger magnitude.
pub fn residualize(model: &LinearModel, dataset: &Dataset) -> Result<Vec<(f64, f64)>> {
    dataset
        .cases
        .iter()
        .map(|case| {
            let f = model.predict_case(case)?;
            let y = case.observation;
            let mut r = y - f;
            for _ in 0..8 {
                let s = r + f;
                if s == y {
                    break;
                }
                let stepped = r + (y - s);
                r = if stepped != r {
                    stepped
                } else if y > s {
                    r.next_up()
                } else {
                    r.next_down()
                };
            }
            Ok((r, f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig, Statistic, VariableId};
    use crate::dist::math::seed_stream;
    use rand::Rng;

    fn spec(v: VariableId, s: Statistic, h: usize) -> PredictorSpec {
        PredictorSpec::new(v, s, h).unwrap()
    }

    #[test]
    fn noiseless_line_is_recovered_exactly() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.25]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let specs = vec![spec(VariableId::WindSpeed10m, Statistic::Mean, 2)];
        let m = fit_ols(&x, &y, &specs).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((m.intercept - 1.0).abs() < 1e-10);
        assert!(m.training_mse < 1e-18);
    }

    #[test]
    fn duplicate_column_is_singular() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64 * 3.0).collect();
        let specs = vec![
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::WindSpeed10m, Statistic::Max, 2),
        ];
        assert!(matches!(fit_ols(&x, &y, &specs), Err(Error::SingularDesign)));
    }

    #[test]
    fn residuals_are_orthogonal_to_columns() {
        let mut rng = seed_stream(14, "ols", 0);
        let n = 200;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 1.5 + 0.7 * r[0] - 2.0 * r[1] + 0.3 * r[2] + rng.random::<f64>())
            .collect();
        let specs = vec![
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::WindU925, Statistic::Mean, 2),
            spec(VariableId::WindV925, Statistic::Mean, 2),
        ];
        let m = fit_ols(&x, &y, &specs).unwrap();
        let resid: Vec<f64> = x.iter().zip(&y).map(|(r, &yi)| yi - m.predict_row(r)).collect();
        let mean_r: f64 = resid.iter().sum::<f64>() / n as f64;
        assert!(mean_r.abs() < 1e-9, "residual mean {mean_r}");
        for j in 0..3 {
            let dot: f64 = x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() / n as f64;
            assert!(dot.abs() < 1e-8, "column {j} correlation {dot}");
        }
    }

    #[test]
    fn stepwise_selects_the_oracle_predictor_first() {
        // Build a dataset where one candidate is (a grid statistic equal to)
        // a near-perfect predictor of the observation.
        let cfg = GeneratorConfig { stations: 4, date_stride: 6, include_test_set: false, ..GeneratorConfig::default() };
        let mut ds = generate_synthetic(&cfg, 21).unwrap().model;
        // Force the observation to be a linear function of the local mean.
        let spec_mean = spec(VariableId::WindSpeed10m, Statistic::Mean, 2);
        for case in &mut ds.cases {
            let f = extract_features(case, &[spec_mean]).unwrap()[0];
            case.observation = (1.2 * f + 0.5).max(0.0);
        }
        let candidates = vec![
            spec(VariableId::WindDirSin, Statistic::Mean, 2),
            spec_mean,
            spec(VariableId::MslPressure, Statistic::Mean, 2),
        ];
        let m = forward_stepwise(&candidates, &ds, 1e-3).unwrap();
        assert_eq!(m.specs[0], spec_mean);
        assert_eq!(m.specs.len(), 1, "selected {:?}", m.specs);
    }

    #[test]
    fn stepwise_prefers_true_signals_over_distractors() {
        // y = 3 a - b + noise with two distractor columns; selection runs on a
        // synthetic matrix routed through fit_ols directly.
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = seed_stream(seed, "stepwise-sim", 0);
            let n = 300;
            let cols: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|i| 3.0 * cols[0][i] - cols[1][i] + 0.3 * (rng.random::<f64>() - 0.5))
                .collect();
            // Greedy selection mirrored over plain matrices.
            let specs: Vec<PredictorSpec> = vec![
                spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
                spec(VariableId::WindU925, Statistic::Mean, 2),
                spec(VariableId::WindV925, Statistic::Mean, 2),
                spec(VariableId::MslPressure, Statistic::Mean, 2),
            ];
            let mut selected: Vec<usize> = Vec::new();
            let mut current = {
                let ym = y.iter().sum::<f64>() / n as f64;
                y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / n as f64
            };
            loop {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..4 {
                    if selected.contains(&c) {
                        continue;
                    }
                    let idx: Vec<usize> =
                        selected.iter().copied().chain(std::iter::once(c)).collect();
                    let x: Vec<Vec<f64>> =
                        (0..n).map(|i| idx.iter().map(|&j| cols[j][i]).collect()).collect();
                    let sp: Vec<PredictorSpec> = idx.iter().map(|&j| specs[j]).collect();
                    let m = fit_ols(&x, &y, &sp).unwrap();
                    if best.is_none() || m.training_mse < best.unwrap().1 {
                        best = Some((c, m.training_mse));
                    }
                }
                let (c, mse) = best.unwrap();
                if (current - mse) / current < 1e-3 {
                    break;
                }
                selected.push(c);
                current = mse;
                if selected.len() == 4 {
                    break;
                }
            }
            if selected.len() >= 2 && selected[..2].contains(&0) && selected[..2].contains(&1) {
                hits += 1;
            }
        }
        assert!(hits >= 19, "true predictors selected first in {hits}/20 runs");
    }

    #[test]
    fn stepwise_mse_is_nonincreasing() {
        let cfg = GeneratorConfig { stations: 4, date_stride: 8, include_test_set: false, ..GeneratorConfig::default() };
        let ds = generate_synthetic(&cfg, 33).unwrap().model;
        let candidates = vec![
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::WindSpeed10m, Statistic::Max, 2),
            spec(VariableId::WindU925, Statistic::Mean, 2),
            spec(VariableId::SurfaceRoughness, Statistic::Point, 0),
        ];
        // Refit nested prefixes of the selected specs: MSE must not increase.
        let full = forward_stepwise(&candidates, &ds, 0.0).unwrap();
        let x: Vec<Vec<f64>> =
            ds.cases.iter().map(|c| extract_features(c, &full.specs).unwrap()).collect();
        let y: Vec<f64> = ds.cases.iter().map(|c| c.observation).collect();
        let mut last = f64::INFINITY;
        for k in 1..=full.specs.len() {
            let xs: Vec<Vec<f64>> = x.iter().map(|r| r[..k].to_vec()).collect();
            let m = fit_ols(&xs, &y, &full.specs[..k]).unwrap();
            assert!(m.training_mse <= last + 1e-12);
            last = m.training_mse;
        }
    }

    #[test]
    fn residualize_round_trips_bitwise() {
        let cfg = GeneratorConfig { stations: 6, date_stride: 4, include_test_set: false, ..GeneratorConfig::default() };
        let ds = generate_synthetic(&cfg, 8).unwrap().model;
        let specs = vec![
            spec(VariableId::WindSpeed10m, Statistic::Mean, 2),
            spec(VariableId::SurfaceRoughness, Statistic::Point, 0),
        ];
        let m = fit_linear_model(&ds, &specs).unwrap();
        let pairs = residualize(&m, &ds).unwrap();
        let mut exact = 0usize;
        for ((r, f), case) in pairs.iter().zip(&ds.cases) {
            let y = case.observation;
            if (r + f).to_bits() == y.to_bits() {
                exact += 1;
            }
            // When ulp(r) > ulp(y) bit identity is unrepresentable; the
            // reconstruction is then within one ulp of the larger magnitude.
            let tol = f64::EPSILON * (y.abs() + f.abs() + r.abs());
            assert!(((r + f) - y).abs() <= tol, "y={y}, r={r}, f={f}");
        }
        assert!(
            exact as f64 >= 0.9 * pairs.len() as f64,
            "bitwise reconstruction in only {exact}/{} cases",
            pairs.len()
        );
        // Residual variance does not exceed observation variance.
        let y: Vec<f64> = ds.cases.iter().map(|c| c.observation).collect();
        let ym = y.iter().sum::<f64>() / y.len() as f64;
        let var_y: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / y.len() as f64;
        let rm = pairs.iter().map(|(r, _)| r).sum::<f64>() / pairs.len() as f64;
        let var_r: f64 =
            pairs.iter().map(|(r, _)| (r - rm) * (r - rm)).sum::<f64>() / pairs.len() as f64;
        assert!(var_r <= var_y + 1e-12, "residual var {var_r} vs obs var {var_y}");
        assert!(rm.abs() < 1e-9, "training residual mean {rm}");
    }

    #[test]
    fn perfect_model_gives_zero_residuals() {
        let cfg = GeneratorConfig { stations: 3, date_stride: 10, include_test_set: false, ..GeneratorConfig::default() };
        let mut ds = generate_synthetic(&cfg, 2).unwrap().model;
        let spec_mean = spec(VariableId::WindSpeed10m, Statistic::Mean, 2);
        for case in &mut ds.cases {
            let f = extract_features(case, &[spec_mean]).unwrap()[0];
            case.observation = 2.0 * f + 3.0;
        }
        let m = fit_linear_model(&ds, &[spec_mean]).unwrap();
        let pairs = residualize(&m, &ds).unwrap();
        for (r, _) in pairs {
            assert!(r.abs() < 1e-8, "residual {r}");
        }
    }
}
