//! CSV and SVG output shared by the experiment modules.
//!
//! CSV files follow RFC 4180 (CRLF record terminators, quoting as needed)
//! preceded by `# key=value` metadata lines. Floats are written with 17
//! significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};

use faer::{Mat, MatRef};

use crate::error::{GrdpgError, Result};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Metadata lines preceding a CSV body.
pub type Meta = Vec<(String, String)>;

pub fn meta<K: ToString, V: ToString>(pairs: impl IntoIterator<Item = (K, V)>) -> Meta {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn write_meta<W: Write>(w: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        if k.contains(['\r', '\n', '=']) || v.contains(['\r', '\n']) {
            return Err(GrdpgError::InvalidInput(format!("metadata entry {k:?} cannot be written")));
        }
        write!(w, "# {k}={v}\r\n")?;
    }
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w)
}

/// Writes string records under a header.
pub fn write_records<W: Write>(
    mut w: W,
    meta: &[(String, String)],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_meta(&mut w, meta)?;
    let mut out = csv_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a matrix row by row. `leading` optionally prepends a labelled
/// integer column (e.g. block assignments).
pub fn write_matrix<W: Write>(
    w: W,
    meta: &[(String, String)],
    header: &[String],
    m: MatRef<'_, f64>,
    leading: Option<(&str, &[usize])>,
) -> Result<()> {
    let mut cols: Vec<&str> = Vec::new();
    if let Some((name, values)) = leading {
        if values.len() != m.nrows() {
            return Err(GrdpgError::InvalidDimension("leading column length mismatch".into()));
        }
        cols.push(name);
    }
    if header.len() != m.ncols() {
        return Err(GrdpgError::InvalidDimension("header length mismatch".into()));
    }
    cols.extend(header.iter().map(String::as_str));
    let rows = (0..m.nrows()).map(|i| {
        let mut r = Vec::with_capacity(cols.len());
        if let Some((_, values)) = leading {
            r.push(values[i].to_string());
        }
        r.extend((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])));
        r
    });
    write_records(w, meta, &cols, rows)
}

/// A parsed CSV file: metadata, header and string records.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvContent {
    pub meta: Meta,
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl CsvContent {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric matrix of the columns from `first_col` on.
    pub fn matrix_from(&self, first_col: usize) -> Result<Mat<f64>> {
        let ncols = self.header.len().saturating_sub(first_col);
        let mut m = Mat::<f64>::zeros(self.records.len(), ncols);
        for (i, r) in self.records.iter().enumerate() {
            for j in 0..ncols {
                m[(i, j)] = r[first_col + j]
                    .trim()
                    .parse()
                    .map_err(|_| GrdpgError::InvalidInput(format!("bad number {:?} in row {i}", r[first_col + j])))?;
            }
        }
        Ok(m)
    }
}

pub fn read_csv<R: Read>(mut r: R) -> Result<CsvContent> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut meta = Vec::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.strip_prefix('#') else { break };
        body_start += line.len();
        if let Some((k, v)) = rest.trim().split_once('=') {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[body_start..]);
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(CsvContent { meta, header, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Scatter,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub kind: SeriesKind,
}

/// Minimal headless SVG chart with optional log axes.
#[derive(Debug, Clone)]
pub struct SvgPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub width: f64,
    pub height: f64,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl SvgPlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
            width: 640.0,
            height: 480.0,
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn with_series(mut self, name: impl Into<String>, kind: SeriesKind, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { name: name.into(), points, kind });
        self
    }

    fn transform(&self, (x, y): (f64, f64)) -> Option<(f64, f64)> {
        let x = if self.log_x { (x > 0.0).then(|| x.log10())? } else { x };
        let y = if self.log_y { (y > 0.0).then(|| y.log10())? } else { y };
        (x.is_finite() && y.is_finite()).then_some((x, y))
    }

    pub fn render(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().filter_map(|&p| self.transform(p)))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad_x = 0.05 * (x1 - x0);
        let pad_y = 0.05 * (y1 - y0);
        let (x0, x1, y0, y1) = (x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y);
        let (w, h) = (self.width, self.height);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (w - 2.0 * MARGIN);
        let sy = |y: f64| h - MARGIN - (y - y0) / (y1 - y0) * (h - 2.0 * MARGIN);

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * MARGIN,
            h - 2.0 * MARGIN
        );
        for t in 0..=4 {
            let f = t as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let xl = if self.log_x { format!("{:.3}", 10f64.powf(xv)) } else { format!("{xv:.3}") };
            let yl = if self.log_y { format!("{:.3e}", 10f64.powf(yv)) } else { format!("{yv:.3}") };
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, sx(xv), h - MARGIN + 16.0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yl}</text>"#, MARGIN - 4.0, sy(yv) + 4.0);
        }
        let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&self.title));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(&self.x_label));
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let tp: Vec<(f64, f64)> = s.points.iter().filter_map(|&p| self.transform(p)).collect();
            match s.kind {
                SeriesKind::Line => {
                    let path: Vec<String> = tp.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                    let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
                }
                SeriesKind::Scatter => {
                    for &(x, y) in &tp {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#, sx(x), sy(y));
                    }
                }
            }
            let ly = MARGIN + 14.0 + 16.0 * k as f64;
            let _ = writeln!(out, r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, w - MARGIN - 150.0, ly - 9.0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, w - MARGIN - 135.0, escape(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}
