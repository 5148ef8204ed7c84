//! Static SVG verification plots rendered from the report CSV files:
//! PIT diagram, Brier-skill curve, reliability diagrams, per-station CRPSS.

use crate::error::{Error, Result};
use std::io::BufRead;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#17becf",
];

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut body = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        body.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n",
            WIDTH / 2.0
        ));
        Svg { body }
    }

    fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
            MARGIN,
            MARGIN,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        ));
        for k in 0..=4 {
            let xv = f.x_lo + (f.x_hi - f.x_lo) * k as f64 / 4.0;
            let yv = f.y_lo + (f.y_hi - f.y_lo) * k as f64 / 4.0;
            self.body.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
                f.x(xv),
                HEIGHT - MARGIN + 18.0,
                xv
            ));
            self.body.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
                MARGIN - 6.0,
                f.y(yv) + 4.0,
                yv
            ));
        }
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{x_label}</text>\n",
            WIDTH / 2.0,
            HEIGHT - 12.0
        ));
        self.body.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
            HEIGHT / 2.0,
            HEIGHT / 2.0
        ));
    }

    fn polyline(&mut self, f: &Frame, points: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", f.x(*x), f.y(y.clamp(f.y_lo, f.y_hi))))
            .collect();
        if coords.len() < 2 {
            return;
        }
        let dash = if dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>\n",
            coords.join(" ")
        ));
    }

    fn legend(&mut self, names: &[String]) {
        for (i, name) in names.iter().enumerate() {
            let y = MARGIN + 16.0 + 16.0 * i as f64;
            let color = PALETTE[i % PALETTE.len()];
            self.body.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                MARGIN + 8.0,
                y,
                MARGIN + 32.0,
                y
            ));
            self.body.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
                MARGIN + 38.0,
                y + 4.0
            ));
        }
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.body.push_str("</svg>\n");
        std::fs::write(path, self.body)?;
        Ok(())
    }
}

/// (method, x, y) triples from a report CSV with one leading method column.
fn read_series(path: &Path, x_col: usize, y_col: usize) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let err = |m: String| Error::FormatError { file: path.display().to_string(), message: m };
    let file = std::fs::File::open(path)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= x_col.max(y_col) {
            return Err(err(format!("line {}: too few columns", lineno + 1)));
        }
        let x: f64 = fields[x_col].parse().unwrap_or(f64::NAN);
        let y: f64 = fields[y_col].parse().unwrap_or(f64::NAN);
        let method = fields[0].to_string();
        match series.iter_mut().find(|(m, _)| *m == method) {
            Some((_, pts)) => pts.push((x, y)),
            None => series.push((method, vec![(x, y)])),
        }
    }
    Ok(series)
}

/// Render every SVG the report supports; returns the files written.
pub fn plot_report(report_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let pit = report_dir.join("pit.csv");
    if pit.exists() {
        let series = read_series(&pit, 1, 2)?;
        let f = Frame { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
        let mut svg = Svg::new("PIT diagram");
        svg.axes(&f, "probability integral transform", "empirical fraction");
        svg.polyline(&f, &[(0.0, 0.0), (1.0, 1.0)], "#aaaaaa", true);
        let names: Vec<String> = series.iter().map(|(m, _)| m.clone()).collect();
        for (i, (_, pts)) in series.iter().enumerate() {
            svg.polyline(&f, pts, PALETTE[i % PALETTE.len()], false);
        }
        svg.legend(&names);
        let out = report_dir.join("pit.svg");
        svg.finish(&out)?;
        written.push(out);
    }

    let bss = report_dir.join("bss_curve.csv");
    if bss.exists() {
        let series = read_series(&bss, 1, 2)?;
        let mut y_lo: f64 = -0.5;
        let mut y_hi: f64 = 0.5;
        let mut x_hi: f64 = 1.0;
        for (_, pts) in &series {
            for &(x, y) in pts {
                if y.is_finite() {
                    y_lo = y_lo.min(y - 0.05);
                    y_hi = y_hi.max(y + 0.05);
                }
                if x.is_finite() {
                    x_hi = x_hi.max(x);
                }
            }
        }
        let f = Frame { x_lo: 0.0, x_hi, y_lo: y_lo.max(-1.5), y_hi };
        let mut svg = Svg::new("Brier skill score by threshold");
        svg.axes(&f, "threshold (m/s)", "Brier skill score");
        svg.polyline(&f, &[(0.0, 0.0), (x_hi, 0.0)], "#aaaaaa", true);
        let names: Vec<String> = series.iter().map(|(m, _)| m.clone()).collect();
        for (i, (_, pts)) in series.iter().enumerate() {
            svg.polyline(&f, pts, PALETTE[i % PALETTE.len()], false);
        }
        svg.legend(&names);
        let out = report_dir.join("bss_curve.svg");
        svg.finish(&out)?;
        written.push(out);
    }

    for t in [5, 10, 15] {
        let rel = report_dir.join(format!("reliability_{t}.csv"));
        if rel.exists() {
            let series = read_series(&rel, 3, 4)?;
            let f = Frame { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
            let mut svg = Svg::new(&format!("Reliability diagram, {t} m/s"));
            svg.axes(&f, "mean forecast probability", "observed frequency");
            svg.polyline(&f, &[(0.0, 0.0), (1.0, 1.0)], "#aaaaaa", true);
            let names: Vec<String> = series.iter().map(|(m, _)| m.clone()).collect();
            for (i, (_, pts)) in series.iter().enumerate() {
                let pts: Vec<(f64, f64)> = pts
                    .iter()
                    .copied()
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect();
                svg.polyline(&f, &pts, PALETTE[i % PALETTE.len()], false);
            }
            svg.legend(&names);
            let out = report_dir.join(format!("reliability_{t}.svg"));
            svg.finish(&out)?;
            written.push(out);
        }
    }

    let station = report_dir.join("station_crpss.csv");
    if station.exists() {
        let series = read_series(&station, 1, 2)?;
        let mut x_hi: f64 = 1.0;
        let mut y_lo: f64 = -0.1;
        let mut y_hi: f64 = 0.5;
        for (_, pts) in &series {
            for &(x, y) in pts {
                if x.is_finite() {
                    x_hi = x_hi.max(x + 1.0);
                }
                if y.is_finite() {
                    y_lo = y_lo.min(y - 0.05);
                    y_hi = y_hi.max(y + 0.05);
                }
            }
        }
        let f = Frame { x_lo: 0.0, x_hi, y_lo: y_lo.max(-2.0), y_hi };
        let mut svg = Svg::new("CRPSS per station");
        svg.axes(&f, "station id", "CRPSS vs reference");
        svg.polyline(&f, &[(0.0, 0.0), (x_hi, 0.0)], "#aaaaaa", true);
        let names: Vec<String> = series.iter().map(|(m, _)| m.clone()).collect();
        for (i, (_, pts)) in series.iter().enumerate() {
            svg.polyline(&f, pts, PALETTE[i % PALETTE.len()], false);
        }
        svg.legend(&names);
        let out = report_dir.join("station_crpss.svg");
        svg.finish(&out)?;
        written.push(out);
    }

    if written.is_empty() {
        return Err(Error::ConfigError(format!(
            "no report CSV files found in {}",
            report_dir.display()
        )));
    }
    Ok(written)
}
