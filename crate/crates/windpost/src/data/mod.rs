//! Dataset model: stations, gridded forecast cases, predictor specs, fold
//! splitting, dataset files, and the synthetic generator.

mod features;
mod folds;
mod io;
mod synthetic;

pub use features::{extract_features, extract_patch};
pub use folds::make_folds;
pub use io::{load_dataset, save_dataset};
pub use synthetic::{generate_synthetic, GeneratorConfig, SyntheticPair};

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::BTreeMap;

/// A weather station.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: u32,
    pub longitude: f64,
    pub latitude: f64,
    pub name: String,
}

impl Station {
    pub fn new(id: u32, longitude: f64, latitude: f64, name: String) -> Result<Self> {
        if !(-180.0..=180.0).contains(&longitude) || !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::DomainError(format!(
                "station {id}: coordinates ({longitude}, {latitude}) out of range"
            )));
        }
        Ok(Self { id, longitude, latitude, name })
    }
}

/// Forecast variables available as gridded predictors. Vector predictors
/// (wind direction, the pressure-level winds) are stored as one grid per
/// component; the 10 m wind-speed grid doubles as the convolutional input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariableId {
    WindDirSin,
    WindDirCos,
    WindSpeed10m,
    SurfaceRoughness,
    WindU925,
    WindV925,
    MslPressure,
    TotalKineticEnergy,
    SurfaceHumidity,
    Geopotential500,
    SurfaceTemperature,
    WindU850,
    WindV850,
    DayOfYear,
}

impl VariableId {
    pub const ALL: [VariableId; 14] = [
        VariableId::WindDirSin,
        VariableId::WindDirCos,
        VariableId::WindSpeed10m,
        VariableId::SurfaceRoughness,
        VariableId::WindU925,
        VariableId::WindV925,
        VariableId::MslPressure,
        VariableId::TotalKineticEnergy,
        VariableId::SurfaceHumidity,
        VariableId::Geopotential500,
        VariableId::SurfaceTemperature,
        VariableId::WindU850,
        VariableId::WindV850,
        VariableId::DayOfYear,
    ];

    /// Stable tag used in file names and config files.
    pub fn tag(&self) -> &'static str {
        match self {
            VariableId::WindDirSin => "wind_dir_sin",
            VariableId::WindDirCos => "wind_dir_cos",
            VariableId::WindSpeed10m => "wind_speed_10m",
            VariableId::SurfaceRoughness => "surface_roughness",
            VariableId::WindU925 => "wind_u925",
            VariableId::WindV925 => "wind_v925",
            VariableId::MslPressure => "msl_pressure",
            VariableId::TotalKineticEnergy => "total_kinetic_energy",
            VariableId::SurfaceHumidity => "surface_humidity",
            VariableId::Geopotential500 => "geopotential_500",
            VariableId::SurfaceTemperature => "surface_temperature",
            VariableId::WindU850 => "wind_u850",
            VariableId::WindV850 => "wind_v850",
            VariableId::DayOfYear => "day_of_year",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|v| v.tag() == tag)
            .copied()
            .ok_or_else(|| Error::ConfigError(format!("unknown variable {tag:?}")))
    }

    /// Wind-speed grids must be nonnegative.
    pub fn is_nonnegative(&self) -> bool {
        matches!(self, VariableId::WindSpeed10m)
    }
}

/// One gridded forecast field, row-major with `values[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub variable: VariableId,
    pub nx: usize,
    pub ny: usize,
    pub spacing_km: f64,
    pub values: Vec<f32>,
    /// Index of the grid point closest to the station.
    pub station_offset: (usize, usize),
}

impl GridField {
    pub fn new(
        variable: VariableId,
        nx: usize,
        ny: usize,
        spacing_km: f64,
        values: Vec<f32>,
        station_offset: (usize, usize),
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::DomainError(format!(
                "grid {}: payload length {} does not match {nx}x{ny}",
                variable.tag(),
                values.len()
            )));
        }
        if !(spacing_km > 0.0) {
            return Err(Error::DomainError("grid spacing must be positive".into()));
        }
        let (ix, iy) = station_offset;
        if ix >= nx || iy >= ny {
            return Err(Error::DomainError(format!(
                "grid {}: station offset ({ix},{iy}) outside {nx}x{ny}",
                variable.tag()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError(format!("grid {}: non-finite value", variable.tag())));
        }
        if variable.is_nonnegative() && values.iter().any(|&v| v < 0.0) {
            return Err(Error::DomainError(format!(
                "grid {}: negative wind speed",
                variable.tag()
            )));
        }
        Ok(Self { variable, nx, ny, spacing_km, values, station_offset })
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        f64::from(self.values[iy * self.nx + ix])
    }
}

/// Spatial statistic taken over a box around the station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Max,
    Min,
    /// Value at the grid point closest to the station.
    Point,
}

impl Statistic {
    pub fn tag(&self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Max => "max",
            Statistic::Min => "min",
            Statistic::Point => "point",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "mean" => Statistic::Mean,
            "max" => Statistic::Max,
            "min" => Statistic::Min,
            "point" => Statistic::Point,
            other => return Err(Error::ConfigError(format!("unknown statistic {other:?}"))),
        })
    }
}

/// One scalar predictor: a statistic of a variable over a station-centered
/// box of half-width `box_halfwidth_cells` (clipped at the grid edge).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorSpec {
    pub variable: VariableId,
    pub statistic: Statistic,
    pub box_halfwidth_cells: usize,
}

impl PredictorSpec {
    pub fn new(variable: VariableId, statistic: Statistic, box_halfwidth_cells: usize) -> Result<Self> {
        if statistic == Statistic::Point && box_halfwidth_cells != 0 {
            return Err(Error::ConfigError(
                "point statistics take the closest grid point; half-width must be 0".into(),
            ));
        }
        if variable == VariableId::SurfaceRoughness && statistic != Statistic::Point {
            return Err(Error::ConfigError(
                "surface roughness is used at the closest grid point only".into(),
            ));
        }
        Ok(Self { variable, statistic, box_halfwidth_cells })
    }

    pub fn label(&self) -> String {
        format!("{}:{}:{}", self.variable.tag(), self.statistic.tag(), self.box_halfwidth_cells)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::ConfigError(format!(
                "predictor spec {text:?} should be `<variable> <statistic> <halfwidth>`"
            )));
        }
        Self::new(
            VariableId::from_tag(parts[0])?,
            Statistic::from_tag(parts[1])?,
            parts[2]
                .parse()
                .map_err(|_| Error::ConfigError(format!("bad half-width in {text:?}")))?,
        )
    }
}

/// One station x one valid date: gridded fields plus the verifying observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub station_id: u32,
    pub init_time: NaiveDate,
    pub lead_hours: u32,
    pub grids: BTreeMap<VariableId, GridField>,
    pub observation: f64,
}

impl ForecastCase {
    pub fn grid(&self, variable: VariableId) -> Result<&GridField> {
        self.grids
            .get(&variable)
            .ok_or_else(|| Error::MissingVariable(variable.tag().to_string()))
    }
}

/// One cross-validation fold: train on two winter blocks, validate on one.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub name: String,
    pub train_dates: Vec<NaiveDate>,
    pub validation_dates: Vec<NaiveDate>,
    pub test_dates: Vec<NaiveDate>,
}

/// Parameters of the conditional distribution an observation was drawn from.
/// Stored alongside synthetic datasets as the acceptance-test oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTruth {
    pub mu_true: f64,
    pub sigma_true: f64,
}

/// A complete dataset: stations, cases in file order, optional truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub stations: Vec<Station>,
    pub cases: Vec<ForecastCase>,
    pub truth: Option<Vec<SyntheticTruth>>,
}

impl Dataset {
    /// Distinct case dates in ascending order.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.cases.iter().map(|c| c.init_time).collect();
        d.sort();
        d.dedup();
        d
    }

    /// Indices of cases whose date is in `dates`.
    pub fn case_indices_for_dates(&self, dates: &[NaiveDate]) -> Vec<usize> {
        let set: std::collections::BTreeSet<NaiveDate> = dates.iter().copied().collect();
        self.cases
            .iter()
            .enumerate()
            .filter(|(_, c)| set.contains(&c.init_time))
            .map(|(i, _)| i)
            .collect()
    }

    /// A new dataset containing only the given case indices (truth sliced too).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            stations: self.stations.clone(),
            cases: indices.iter().map(|&i| self.cases[i].clone()).collect(),
            truth: self
                .truth
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }
}
