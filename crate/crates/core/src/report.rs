//! Output files: CSV tables, raw `f64` dumps, JSON, SVG plots, PGM masks and
//! the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::geometry::GridDomain;
use crate::grid::GridSpec;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Little-endian `f64` values, in order.
pub fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// A CSV table with a fixed header. Floats use Rust's shortest round-trip
/// formatting, so equal values always print identically.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width");
        self.rows.push(cells);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s += &r.join(",");
            s.push('\n');
        }
        s
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `x,y,value` per grid node, node order.
pub fn nodal_table(grid: &GridSpec, v: &[f64]) -> Table {
    let mut t = Table::new(&["x", "y", "value"]);
    for (k, &val) in v.iter().enumerate() {
        let (x, y) = grid.node_xy(k);
        t.row(vec![num(x), num(y), num(val)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
    /// False for files whose content depends on the run (timings).
    pub numerical: bool,
}

/// Collects the files of one run under an output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| LabError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn put(&mut self, name: &str, bytes: &[u8], numerical: bool) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
            numerical,
        });
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.put(name, bytes, true)
    }

    pub fn text(&mut self, name: &str, s: &str) -> Result<()> {
        self.put(name, s.as_bytes(), true)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| LabError::Io(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn csv(&mut self, name: &str, t: &Table) -> Result<()> {
        self.text(name, &t.to_csv())
    }

    pub fn f64s(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.bytes(name, &f64_bytes(v))
    }

    pub fn pgm(&mut self, name: &str, d: &GridDomain) -> Result<()> {
        let mut buf = Vec::new();
        d.write_pgm(&mut buf)?;
        self.bytes(name, &buf)
    }

    /// Stage timings; kept apart from the numerical payloads.
    pub fn timings(&mut self, rows: &[(String, f64)]) -> Result<()> {
        let mut t = Table::new(&["stage", "ms"]);
        for (s, ms) in rows {
            t.row(vec![s.clone(), format!("{ms:.3}")]);
        }
        self.put("timings.csv", t.to_csv().as_bytes(), false)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub parallel: bool,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One named polyline.
pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Line plot; with `log` both axes are base-10 logarithmic and nonpositive
/// points are dropped.
pub fn line_plot(title: &str, xlabel: &str, series: &[Series], log: bool) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let tf = |v: f64| if log { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.x.iter()
                .zip(s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || (**x > 0.0 && **y > 0.0)))
                .map(|(&x, &y)| (tf(x), tf(y)))
                .collect()
        })
        .collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    svg += "\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}{}</text>"#, w / 2.0, h - 12.0, esc(xlabel), if log { " (log-log)" } else { "" });
    if all.is_empty() {
        svg += "</svg>\n";
        return svg;
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(f(p)), hi.max(f(p))))
    };
    let (mut x0, mut x1) = fold(|p| p.0);
    let (mut y0, mut y1) = fold(|p| p.1);
    if x1 - x0 < 1e-300 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-300 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let _ = writeln!(svg, r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * m, h - 2.0 * m);
    let label = |v: f64| if log { format!("{:.1e}", 10f64.powf(v)) } else { format!("{v:.3e}") };
    for (v, anchor, x, y) in [(x0, "start", sx(x0), h - m + 16.0), (x1, "end", sx(x1), h - m + 16.0)] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{}</text>"#, label(v));
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1) + 10.0)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#, m - 4.0, label(v));
    }
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in p {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, w - m - 120.0, m + 16.0 + 14.0 * i as f64, esc(s.name));
    }
    svg += "</svg>\n";
    svg
}

/// Nodal field as a blue-white-red heatmap, symmetric around zero.
pub fn heatmap(title: &str, grid: &GridSpec, v: &[f64]) -> String {
    let cell = (480.0 / grid.nx.max(grid.ny) as f64).max(1.0);
    let (w, h) = (cell * grid.nx as f64 + 20.0, cell * grid.ny as f64 + 50.0);
    let scale = crate::num::max_abs(v).max(f64::MIN_POSITIVE);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    let _ = writeln!(svg, "\n<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{} (max |v| = {scale:.3e})</text>", esc(title));
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let t = (v[grid.node(i, j)] / scale).clamp(-1.0, 1.0);
            let (r, g, b) = if t >= 0.0 {
                (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
            } else {
                (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({:.0},{:.0},{:.0})"/>"#,
                10.0 + i as f64 * cell,
                30.0 + (grid.ny - 1 - j) as f64 * cell,
                cell,
                cell,
                r,
                g,
                b
            );
        }
    }
    svg += "</svg>\n";
    svg
}
