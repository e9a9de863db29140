//! Deterministic SVG line plots from sweep CSVs.
//!
//! Output is a pure function of the input rows and the [`PlotSpec`]: no
//! timestamps, no random ids, fixed float formatting. One line per series
//! joins the median `y` at each distinct `x`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    420
}

/// What to plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub input: PathBuf,
    pub x: String,
    pub y: String,
    /// Column whose distinct values split the rows into series.
    #[serde(default)]
    pub group_by: Option<String>,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    /// Extra columns drawn as dashed reference curves (median per `x`).
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default)]
    pub title: Option<String>,
    pub output: PathBuf,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

impl PlotSpec {
    pub fn new(input: impl Into<PathBuf>, x: &str, y: &str, output: impl Into<PathBuf>) -> Self {
        PlotSpec {
            input: input.into(),
            x: x.to_string(),
            y: y.to_string(),
            group_by: None,
            log_x: false,
            log_y: false,
            references: Vec::new(),
            title: None,
            output: output.into(),
            width: default_width(),
            height: default_height(),
        }
    }
}

/// A CSV held as strings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Read a CSV. An empty file gives an empty table.
    pub fn read(path: &Path) -> Result<Table> {
        if std::fs::metadata(path).map_err(Error::at(path))?.len() == 0 {
            return Ok(Table::default());
        }
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// One polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub reference: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn medians(pairs: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut by_x: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (x, y) in pairs {
        by_x.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
    }
    let mut pts: Vec<(f64, f64)> = by_x.into_values().map(|(x, ys)| (x, median(ys))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Build the series of a plot. Rows whose `status` column exists and is not
/// `ok` are ignored, as are non-finite values and, on log axes, non-positive
/// ones.
pub fn build_series(table: &Table, spec: &PlotSpec) -> Result<Vec<Series>> {
    if table.headers.is_empty() {
        return Ok(Vec::new());
    }
    let xi = table.column(&spec.x)?;
    let yi = table.column(&spec.y)?;
    let gi = spec.group_by.as_deref().map(|g| table.column(g)).transpose()?;
    let refs: Vec<usize> = spec.references.iter().map(|r| table.column(r)).collect::<Result<_>>()?;
    let status = table.column("status").ok();
    let usable =
        |x: f64, y: f64| x.is_finite() && y.is_finite() && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0);
    let rows: Vec<&Vec<String>> =
        table.rows.iter().filter(|r| status.is_none_or(|s| r.get(s).map(String::as_str) == Some("ok"))).collect();
    let num = |r: &Vec<String>, i: usize| r.get(i).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);

    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        let (x, y) = (num(r, xi), num(r, yi));
        if usable(x, y) {
            let key = gi.map(|g| r.get(g).cloned().unwrap_or_default()).unwrap_or_else(|| spec.y.clone());
            groups.entry(key).or_default().push((x, y));
        }
    }
    let mut out: Vec<Series> = groups
        .into_iter()
        .map(|(label, pts)| Series { label, points: medians(pts.into_iter()), reference: false })
        .collect();
    for (name, &ci) in spec.references.iter().zip(&refs) {
        let pts = medians(rows.iter().map(|r| (num(r, xi), num(r, ci))).filter(|&(x, y)| usable(x, y)));
        if !pts.is_empty() {
            out.push(Series { label: name.clone(), points: pts, reference: true });
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln y` on `ln x`; `None` below two points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let t: Vec<f64> = values.map(|v| if log { v.log10() } else { v }).collect();
        let (mut lo, mut hi) = if t.is_empty() {
            (0.0, 1.0)
        } else {
            (t.iter().cloned().fold(f64::INFINITY, f64::min), t.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b > a {
                return (a..=b).map(|e| 10f64.powi(e)).collect();
            }
        }
        (0..5)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * (i as f64 + 0.5) / 5.0;
                if self.log {
                    10f64.powf(t)
                } else {
                    t
                }
            })
            .collect()
    }
}

/// Render series to an SVG document.
pub fn render_svg(series: &[Series], spec: &PlotSpec) -> String {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (left, right, top, bottom) = (70.0, 170.0, 36.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let ax = Axis::fit(all().map(|p| p.0), spec.log_x);
    let ay = Axis::fit(all().map(|p| p.1), spec.log_y);
    let px = |v: f64| left + ax.unit(v) * pw;
    let py = |v: f64| top + (1.0 - ay.unit(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let title = spec.title.clone().unwrap_or_else(|| format!("{} vs {}", spec.y, spec.x));
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        left + pw / 2.0,
        escape(&title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in ax.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            top + ph,
            top + ph + 5.0
        );
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, label(t));
    }
    for t in ay.ticks() {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, label(t));
    }
    let axis_name = |name: &str, log: bool| if log { format!("{name} (log)") } else { name.to_string() };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(&axis_name(&spec.x, spec.log_x))
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&axis_name(&spec.y, spec.log_y))
    );

    let loglog = spec.log_x && spec.log_y;
    let mut colour = 0;
    for (i, ser) in series.iter().enumerate() {
        let stroke = if ser.reference {
            "#555555"
        } else {
            colour += 1;
            PALETTE[(colour - 1) % PALETTE.len()]
        };
        let dash = if ser.reference { r#" stroke-dasharray="6 4""# } else { "" };
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
        if !ser.reference {
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{stroke}"/>"#, px(x), py(y));
            }
        }
        let mut text = ser.label.clone();
        if loglog {
            if let Some(k) = loglog_slope(&ser.points) {
                text.push_str(&format!(" (slope {k:.2})"));
            }
        }
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            lx + 18.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 22.0, ly + 4.0, escape(&text));
    }
    s.push_str("</svg>\n");
    s
}

/// Read the input, render, and write the output file. Returns the SVG.
pub fn plot(spec: &PlotSpec) -> Result<String> {
    let table = Table::read(&spec.input)?;
    let series = build_series(&table, spec)?;
    let svg = render_svg(&series, spec);
    std::fs::write(&spec.output, &svg).map_err(Error::at(&spec.output))?;
    Ok(svg)
}
