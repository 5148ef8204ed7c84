//! Scalar predictor extraction (box statistics) and convolutional patch
//! extraction from forecast grids.

use super::{ForecastCase, PredictorSpec, Statistic, VariableId};
use crate::error::{Error, Result};

/// One real per spec, ordered as the specs. Boxes are clipped at the grid
/// boundary; `point` returns the value at the station offset.
pub fn extract_features(case: &ForecastCase, specs: &[PredictorSpec]) -> Result<Vec<f64>> {
    specs.iter().map(|spec| extract_one(case, spec)).collect()
}

fn extract_one(case: &ForecastCase, spec: &PredictorSpec) -> Result<f64> {
    let grid = case.grid(spec.variable)?;
    let (sx, sy) = grid.station_offset;
    if spec.statistic == Statistic::Point {
        return Ok(grid.at(sx, sy));
    }
    let h = spec.box_halfwidth_cells;
    let x0 = sx.saturating_sub(h);
    let x1 = (sx + h).min(grid.nx - 1);
    let y0 = sy.saturating_sub(h);
    let y1 = (sy + h).min(grid.ny - 1);
    let mut acc = match spec.statistic {
        Statistic::Mean => 0.0,
        Statistic::Max => f64::NEG_INFINITY,
        Statistic::Min => f64::INFINITY,
        Statistic::Point => unreachable!(),
    };
    let mut count = 0usize;
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let v = grid.at(ix, iy);
            match spec.statistic {
                Statistic::Mean => acc += v,
                Statistic::Max => acc = acc.max(v),
                Statistic::Min => acc = acc.min(v),
                Statistic::Point => unreachable!(),
            }
            count += 1;
        }
    }
    Ok(match spec.statistic {
        Statistic::Mean => acc / count as f64,
        _ => acc,
    })
}

/// Square window of the 10 m wind-speed grid centered on the station offset,
/// row-major, `side x side`. Even sides are biased one cell low/left.
pub fn extract_patch(case: &ForecastCase, side_cells: usize) -> Result<Vec<f64>> {
    let grid = case.grid(VariableId::WindSpeed10m)?;
    let (sx, sy) = grid.station_offset;
    let s = side_cells;
    let err = || Error::PatchOutOfBounds {
        side: s,
        nx: grid.nx,
        ny: grid.ny,
        ix: sx,
        iy: sy,
    };
    if s == 0 || s > grid.nx || s > grid.ny {
        return Err(err());
    }
    let half_lo = s / 2;
    let x0 = sx.checked_sub(half_lo).ok_or_else(err)?;
    let y0 = sy.checked_sub(half_lo).ok_or_else(err)?;
    if x0 + s > grid.nx || y0 + s > grid.ny {
        return Err(err());
    }
    let mut out = Vec::with_capacity(s * s);
    for iy in y0..y0 + s {
        for ix in x0..x0 + s {
            out.push(grid.at(ix, iy));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GridField;
    use crate::dist::math::seed_stream;
    use chrono::NaiveDate;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn case_with_grid(nx: usize, ny: usize, values: Vec<f32>, offset: (usize, usize)) -> ForecastCase {
        let grid = GridField::new(VariableId::WindSpeed10m, nx, ny, 2.5, values, offset).unwrap();
        let mut grids = BTreeMap::new();
        grids.insert(VariableId::WindSpeed10m, grid);
        ForecastCase {
            station_id: 1,
            init_time: NaiveDate::from_ymd_opt(2015, 10, 1).unwrap(),
            lead_hours: 48,
            grids,
            observation: 0.0,
        }
    }

    /// Brute-force window statistic by a scalar double loop.
    fn brute_force(grid: &GridField, stat: Statistic, h: usize) -> f64 {
        let (sx, sy) = grid.station_offset;
        let mut vals = Vec::new();
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let dx = ix.abs_diff(sx);
                let dy = iy.abs_diff(sy);
                if dx <= h && dy <= h {
                    vals.push(grid.at(ix, iy));
                }
            }
        }
        match stat {
            Statistic::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            Statistic::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Statistic::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
            Statistic::Point => grid.at(sx, sy),
        }
    }

    #[test]
    fn constant_grid_mean_is_the_constant() {
        let case = case_with_grid(9, 9, vec![3.0; 81], (4, 4));
        let spec = PredictorSpec::new(VariableId::WindSpeed10m, Statistic::Mean, 2).unwrap();
        let f = extract_features(&case, &[spec]).unwrap();
        assert_eq!(f, vec![3.0]);
    }

    #[test]
    fn three_by_three_max_is_exhaustive() {
        let values: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let case = case_with_grid(3, 3, values, (1, 1));
        let spec = PredictorSpec::new(VariableId::WindSpeed10m, Statistic::Max, 1).unwrap();
        assert_eq!(extract_features(&case, &[spec]).unwrap(), vec![9.0]);
    }

    #[test]
    fn random_grid_min_matches_double_loop() {
        let mut rng = seed_stream(2, "features", 0);
        let values: Vec<f32> = (0..60 * 60).map(|_| rng.random::<f32>() * 20.0).collect();
        let case = case_with_grid(60, 60, values, (30, 25));
        let spec = PredictorSpec::new(VariableId::WindSpeed10m, Statistic::Min, 2).unwrap();
        let got = extract_features(&case, &[spec]).unwrap()[0];
        let want = brute_force(case.grid(VariableId::WindSpeed10m).unwrap(), Statistic::Min, 2);
        assert_eq!(got, want);
    }

    #[test]
    fn missing_variable_is_reported() {
        let case = case_with_grid(5, 5, vec![1.0; 25], (2, 2));
        let spec = PredictorSpec::new(VariableId::MslPressure, Statistic::Mean, 1).unwrap();
        assert!(matches!(
            extract_features(&case, &[spec]),
            Err(Error::MissingVariable(v)) if v == "msl_pressure"
        ));
    }

    #[test]
    fn even_patch_biases_low_left() {
        // 4x4 grid, station at (2,2): a side-2 patch covers rows 1..=2, cols 1..=2.
        let values: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let case = case_with_grid(4, 4, values, (2, 2));
        let patch = extract_patch(&case, 2).unwrap();
        assert_eq!(patch, vec![5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn oversized_patch_is_out_of_bounds() {
        let case = case_with_grid(50, 50, vec![1.0; 2500], (25, 25));
        assert!(matches!(
            extract_patch(&case, 60),
            Err(Error::PatchOutOfBounds { side: 60, .. })
        ));
    }

    #[test]
    fn patch_mean_matches_double_loop_oracle() {
        let mut rng = seed_stream(8, "patch", 0);
        let values: Vec<f32> = (0..120 * 120).map(|_| rng.random::<f32>() * 15.0).collect();
        let case = case_with_grid(120, 120, values, (60, 60));
        let side = 60;
        let patch = extract_patch(&case, side).unwrap();
        let got = patch.iter().sum::<f64>() / patch.len() as f64;

        let grid = case.grid(VariableId::WindSpeed10m).unwrap();
        let mut sum = 0.0;
        for iy in 30..90 {
            for ix in 30..90 {
                sum += grid.at(ix, iy);
            }
        }
        let want = sum / (60.0 * 60.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn boxes_clip_at_grid_edges() {
        let values: Vec<f32> = (0..25).map(|v| v as f32).collect();
        let case = case_with_grid(5, 5, values, (0, 0));
        let spec = PredictorSpec::new(VariableId::WindSpeed10m, Statistic::Mean, 2).unwrap();
        let got = extract_features(&case, &[spec]).unwrap()[0];
        let want = brute_force(case.grid(VariableId::WindSpeed10m).unwrap(), Statistic::Mean, 2);
        assert_eq!(got, want);
    }
}
