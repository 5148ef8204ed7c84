//! Dataset directory layout:
//!
//! - `stations.csv` — `id,lon,lat,name`
//! - `cases.csv` — `station_id,init_date,lead_hours,observation`, one row per
//!   case; the row index is the case id referenced by the grid files
//! - `grid_<case>_<variable>.f32` — 64-byte text header
//!   `nx=<int>;ny=<int>;ix=<int>;iy=<int>;` padded with spaces, then
//!   row-major little-endian 32-bit reals
//! - `truth.csv` — `mu_true,sigma_true` for synthetic sets
//!
//! Floats are written in shortest round-trip decimal form, so save followed
//! by load reproduces every field bit-exactly.

use super::{Dataset, ForecastCase, GridField, Station, SyntheticTruth, VariableId};
use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const GRID_HEADER_LEN: usize = 64;
/// Grid spacing of paper-like data; the file format does not persist it.
const DEFAULT_SPACING_KM: f64 = 2.5;

fn format_err(file: &Path, message: impl Into<String>) -> Error {
    Error::FormatError { file: file.display().to_string(), message: message.into() }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut w = BufWriter::new(File::create(dir.join("stations.csv"))?);
    writeln!(w, "id,lon,lat,name")?;
    for s in &ds.stations {
        if s.name.contains(',') || s.name.contains('\n') {
            return Err(Error::ConfigError(format!(
                "station name {:?} contains a delimiter",
                s.name
            )));
        }
        writeln!(w, "{},{},{},{}", s.id, s.longitude, s.latitude, s.name)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("cases.csv"))?);
    writeln!(w, "station_id,init_date,lead_hours,observation")?;
    for c in &ds.cases {
        writeln!(w, "{},{},{},{}", c.station_id, c.init_time, c.lead_hours, c.observation)?;
    }
    w.flush()?;

    for (idx, c) in ds.cases.iter().enumerate() {
        for grid in c.grids.values() {
            let path = dir.join(format!("grid_{idx}_{}.f32", grid.variable.tag()));
            write_grid(&path, grid)?;
        }
    }

    if let Some(truth) = &ds.truth {
        let mut w = BufWriter::new(File::create(dir.join("truth.csv"))?);
        writeln!(w, "mu_true,sigma_true")?;
        for t in truth {
            writeln!(w, "{},{}", t.mu_true, t.sigma_true)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_grid(path: &Path, grid: &GridField) -> Result<()> {
    let (ix, iy) = grid.station_offset;
    let head = format!("nx={};ny={};ix={};iy={};", grid.nx, grid.ny, ix, iy);
    if head.len() > GRID_HEADER_LEN {
        return Err(format_err(path, "grid header exceeds 64 bytes"));
    }
    let mut buf = Vec::with_capacity(GRID_HEADER_LEN + grid.values.len() * 4);
    buf.extend_from_slice(head.as_bytes());
    buf.resize(GRID_HEADER_LEN, b' ');
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_grid(path: &Path, variable: VariableId) -> Result<GridField> {
    let mut f = File::open(path)?;
    let mut header = [0u8; GRID_HEADER_LEN];
    f.read_exact(&mut header)
        .map_err(|_| format_err(path, "file shorter than the 64-byte header"))?;
    let text = std::str::from_utf8(&header)
        .map_err(|_| format_err(path, "header is not valid text"))?
        .trim_end_matches(' ');
    let mut fields: BTreeMap<&str, usize> = BTreeMap::new();
    for part in text.split(';') {
        if part.is_empty() {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("malformed header field {part:?}")))?;
        let parsed = value
            .parse::<usize>()
            .map_err(|_| format_err(path, format!("bad integer in header field {part:?}")))?;
        fields.insert(key, parsed);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| format_err(path, format!("header is missing {k}")))
    };
    let (nx, ny, ix, iy) = (get("nx")?, get("ny")?, get("ix")?, get("iy")?);

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != nx * ny * 4 {
        return Err(format_err(
            path,
            format!("header declares {nx}x{ny} values, payload holds {} bytes", payload.len()),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    GridField::new(variable, nx, ny, DEFAULT_SPACING_KM, values, (ix, iy))
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let stations_path = dir.join("stations.csv");
    let mut stations = Vec::new();
    for (lineno, line) in BufReader::new(File::open(&stations_path)?).lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != "id,lon,lat,name" {
                return Err(format_err(&stations_path, format!("line 1: unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(4, ',').collect();
        if parts.len() != 4 {
            return Err(format_err(&stations_path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let bad = |what: &str| format_err(&stations_path, format!("line {}: bad {what}", lineno + 1));
        stations.push(Station::new(
            parts[0].parse().map_err(|_| bad("station id"))?,
            parts[1].parse().map_err(|_| bad("longitude"))?,
            parts[2].parse().map_err(|_| bad("latitude"))?,
            parts[3].to_string(),
        )?);
    }

    // Index the grid files once: case index -> (variable, path).
    let mut grid_files: BTreeMap<usize, Vec<(VariableId, std::path::PathBuf)>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_prefix("grid_").and_then(|s| s.strip_suffix(".f32")) else {
            continue;
        };
        let Some((idx_str, tag)) = stem.split_once('_') else {
            continue;
        };
        let idx: usize = idx_str
            .parse()
            .map_err(|_| format_err(&entry.path(), "bad case index in file name"))?;
        let variable = VariableId::from_tag(tag)
            .map_err(|_| format_err(&entry.path(), format!("unknown variable {tag:?}")))?;
        grid_files.entry(idx).or_default().push((variable, entry.path()));
    }

    let cases_path = dir.join("cases.csv");
    let mut cases = Vec::new();
    for (lineno, line) in BufReader::new(File::open(&cases_path)?).lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != "station_id,init_date,lead_hours,observation" {
                return Err(format_err(&cases_path, format!("line 1: unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(format_err(&cases_path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let bad = |what: &str| format_err(&cases_path, format!("line {}: bad {what}", lineno + 1));
        let idx = cases.len();
        let mut grids = BTreeMap::new();
        for (variable, path) in grid_files.get(&idx).map(Vec::as_slice).unwrap_or(&[]) {
            grids.insert(*variable, read_grid(path, *variable)?);
        }
        let observation: f64 = parts[3].parse().map_err(|_| bad("observation"))?;
        if !(observation >= 0.0) {
            return Err(bad("observation (wind speed must be nonnegative)"));
        }
        cases.push(ForecastCase {
            station_id: parts[0].parse().map_err(|_| bad("station id"))?,
            init_time: NaiveDate::parse_from_str(parts[1], "%Y-%m-%d").map_err(|_| bad("date"))?,
            lead_hours: parts[2].parse().map_err(|_| bad("lead hours"))?,
            observation,
            grids,
        });
    }

    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        let mut rows = Vec::new();
        for (lineno, line) in BufReader::new(File::open(&truth_path)?).lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line != "mu_true,sigma_true" {
                    return Err(format_err(&truth_path, format!("line 1: unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = || format_err(&truth_path, format!("line {}: bad row", lineno + 1));
            let (mu, sigma) = line.split_once(',').ok_or_else(bad)?;
            rows.push(SyntheticTruth {
                mu_true: mu.parse().map_err(|_| bad())?,
                sigma_true: sigma.parse().map_err(|_| bad())?,
            });
        }
        if rows.len() != cases.len() {
            return Err(format_err(
                &truth_path,
                format!("{} truth rows for {} cases", rows.len(), cases.len()),
            ));
        }
        Some(rows)
    } else {
        None
    };

    Ok(Dataset { stations, cases, truth })
}
