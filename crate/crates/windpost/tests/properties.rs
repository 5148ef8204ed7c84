//! Property tests for the extraction and distribution invariants.

use proptest::prelude::*;
use windpost::data::{ForecastCase, GridField, PredictorSpec, Statistic, VariableId};
use windpost::dist::{
    histogram_from_logits, mixture_from_raw, residual_centers, speed_edges, EmpiricalCdf,
    GaussianMixture, Histogram, PredictiveDistribution, TruncatedNormal,
};
use windpost::scoring::crps::{crps_empirical, crps_histogram, crps_mixture, crps_truncnorm};
use windpost::scoring::crps_numeric;

fn case_with_speed_grid(nx: usize, ny: usize, values: Vec<f32>, offset: (usize, usize)) -> ForecastCase {
    let grid = GridField::new(VariableId::WindSpeed10m, nx, ny, 2.5, values, offset).unwrap();
    let mut grids = std::collections::BTreeMap::new();
    grids.insert(VariableId::WindSpeed10m, grid);
    ForecastCase {
        station_id: 1,
        init_time: chrono::NaiveDate::from_ymd_opt(2015, 11, 1).unwrap(),
        lead_hours: 48,
        grids,
        observation: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Box statistics equal a naive double loop for every statistic.
    #[test]
    fn extract_features_matches_double_loop(
        nx in 3usize..20,
        ny in 3usize..20,
        sx_frac in 0.0f64..1.0,
        sy_frac in 0.0f64..1.0,
        halfwidth in 0usize..4,
        seed in 0u64..1000,
    ) {
        let sx = ((nx - 1) as f64 * sx_frac) as usize;
        let sy = ((ny - 1) as f64 * sy_frac) as usize;
        let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 10_000) as f32 / 500.0
        };
        let values: Vec<f32> = (0..nx * ny).map(|_| next()).collect();
        let case = case_with_speed_grid(nx, ny, values, (sx, sy));
        for stat in [Statistic::Mean, Statistic::Max, Statistic::Min] {
            let spec = PredictorSpec::new(VariableId::WindSpeed10m, stat, halfwidth).unwrap();
            let got = windpost::data::extract_features(&case, &[spec]).unwrap()[0];

            let grid = case.grid(VariableId::WindSpeed10m).unwrap();
            let mut vals = Vec::new();
            for iy in 0..ny {
                for ix in 0..nx {
                    if ix.abs_diff(sx) <= halfwidth && iy.abs_diff(sy) <= halfwidth {
                        vals.push(grid.at(ix, iy));
                    }
                }
            }
            let want = match stat {
                Statistic::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                Statistic::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Statistic::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
                Statistic::Point => unreachable!(),
            };
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    /// Softmax-built mixtures have weights summing to one.
    #[test]
    fn mixture_weights_sum_to_one(raw in prop::collection::vec(-8.0f64..8.0, 2..40)) {
        let n = raw.len() / 2;
        prop_assume!(n >= 1);
        let g = mixture_from_raw(&raw[..2 * n], &residual_centers(n)).unwrap();
        prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// CDF limits and quantile/cdf consistency for every family.
    #[test]
    fn cdf_bounds_and_quantile_consistency(
        raw in prop::collection::vec(-3.0f64..3.0, 8),
        mu in -3.0f64..8.0,
        sigma in 0.05f64..4.0,
        tau in 0.01f64..0.99,
    ) {
        let tn = TruncatedNormal::new(mu, sigma, 0.0);
        prop_assume!(tn.is_ok());
        let dists = vec![
            PredictiveDistribution::Histogram(histogram_from_logits(&raw, speed_edges(8)).unwrap()),
            PredictiveDistribution::Mixture(
                mixture_from_raw(&raw, &residual_centers(4)).unwrap(),
            ),
            PredictiveDistribution::TruncNormal(tn.unwrap()),
            PredictiveDistribution::Empirical(
                EmpiricalCdf::new(raw.clone(), vec![1.0; raw.len()]).unwrap(),
            ),
        ];
        for d in &dists {
            let (lo, hi) = d.support_bounds();
            prop_assert!(d.cdf(lo - 1e6) < 1e-9);
            prop_assert!(d.cdf(hi + 1e6) > 1.0 - 1e-9);
            let q = d.quantile(tau).unwrap();
            // cdf(quantile(tau)) >= tau, and pushing left of the quantile
            // drops the CDF below tau (up to numeric slack away from atoms).
            prop_assert!(d.cdf(q) >= tau - 1e-6, "cdf(q)={} tau={tau}", d.cdf(q));
            prop_assert!(d.cdf_left(q) <= tau + 1e-6, "cdf_left(q)={} tau={tau}", d.cdf_left(q));
        }
    }

    /// Closed-form CRPS agrees with the numeric oracle and is nonnegative.
    #[test]
    fn closed_form_crps_tracks_the_oracle(
        raw in prop::collection::vec(-2.0f64..2.0, 12),
        y in -5.0f64..20.0,
        mu in -2.0f64..8.0,
        sigma in 0.1f64..3.0,
    ) {
        let h = histogram_from_logits(&raw, speed_edges(12)).unwrap();
        let d = PredictiveDistribution::Histogram(h.clone());
        let closed = crps_histogram(&h, y);
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - crps_numeric(&d, y).unwrap()).abs() < 1e-6);

        let g = mixture_from_raw(&raw, &residual_centers(6)).unwrap();
        let d = PredictiveDistribution::Mixture(g.clone());
        let closed = crps_mixture(&g, y);
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - crps_numeric(&d, y).unwrap()).abs() < 1e-6);

        // The closed form requires non-negligible mass above the bound.
        prop_assume!(mu / sigma > -6.5);
        let t = TruncatedNormal::new(mu, sigma, 0.0).unwrap();
        let d = PredictiveDistribution::TruncNormal(t);
        let closed = crps_truncnorm(&t, y).unwrap();
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - crps_numeric(&d, y).unwrap()).abs() < 1e-6);

        let e = EmpiricalCdf::new(raw.clone(), vec![1.0; raw.len()]).unwrap();
        let d = PredictiveDistribution::Empirical(e.clone());
        let closed = crps_empirical(&e, y);
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - crps_numeric(&d, y).unwrap()).abs() < 1e-6);
    }

    /// CRPS translation equivariance: shifting forecast and observation
    /// together leaves the score unchanged.
    #[test]
    fn crps_translation_equivariance(
        raw in prop::collection::vec(-2.0f64..2.0, 10),
        y in -5.0f64..20.0,
        shift in -20.0f64..20.0,
        mu in -2.0f64..6.0,
        sigma in 0.1f64..3.0,
    ) {
        let h = histogram_from_logits(&raw, speed_edges(10)).unwrap();
        let hs = Histogram::new(
            h.edges.iter().map(|e| e + shift).collect(),
            h.probs.clone(),
        ).unwrap();
        prop_assert!((crps_histogram(&h, y) - crps_histogram(&hs, y + shift)).abs() < 1e-9);

        let g = mixture_from_raw(&raw, &residual_centers(5)).unwrap();
        let gs = GaussianMixture::new(
            g.centers.iter().map(|c| c + shift).collect(),
            g.weights.clone(),
            g.sigmas.clone(),
        ).unwrap();
        prop_assert!((crps_mixture(&g, y) - crps_mixture(&gs, y + shift)).abs() < 1e-9);

        // The closed form requires non-negligible mass above the bound.
        prop_assume!(mu / sigma > -6.5);
        let t = TruncatedNormal::new(mu, sigma, 0.0).unwrap();
        let ts = TruncatedNormal::new(mu + shift, sigma, shift).unwrap();
        prop_assert!(
            (crps_truncnorm(&t, y).unwrap() - crps_truncnorm(&ts, y + shift).unwrap()).abs() < 1e-9
        );

        let e = EmpiricalCdf::new(raw.clone(), vec![1.0; raw.len()]).unwrap();
        let es = EmpiricalCdf::new(raw.iter().map(|v| v + shift).collect(), vec![1.0; raw.len()]).unwrap();
        prop_assert!((crps_empirical(&e, y) - crps_empirical(&es, y + shift)).abs() < 1e-9);
    }
}
