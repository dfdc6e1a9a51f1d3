//! CSV, NDJSON and SVG emitters. Every file starts with the manifest hash,
//! the crate version and the seed.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Manifest;
use crate::error::{Error, Result};
use crate::mixing::RateFit;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_hash: String,
    pub version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(manifest: &Manifest) -> Self {
        Self {
            manifest_hash: manifest.hash(),
            version: VERSION.to_string(),
            seed: manifest.noise.seed,
        }
    }
}

/// Comma-separated rows behind `#` provenance lines and a header row.
/// Numbers use Rust's shortest round-trip formatting.
pub struct CsvWriter<W: Write> {
    out: W,
    width: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, prov: &Provenance, columns: &[&str]) -> Result<Self> {
        writeln!(out, "# manifest_hash={}", prov.manifest_hash)?;
        writeln!(out, "# version={}", prov.version)?;
        writeln!(out, "# seed={}", prov.seed)?;
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self {
            out,
            width: columns.len(),
        })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        crate::error::check_len(self.width, values.len())?;
        let mut line = String::with_capacity(24 * values.len());
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{v:?}").expect("writing to a String");
        }
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn create_csv(path: &Path, prov: &Provenance, columns: &[&str]) -> Result<CsvWriter<BufWriter<File>>> {
    CsvWriter::new(BufWriter::new(File::create(path)?), prov, columns)
}

/// Newline-delimited JSON: a header object followed by one record per line.
pub struct NdjsonWriter<W: Write> {
    out: W,
}

#[derive(Serialize)]
struct Header<'a> {
    record: &'static str,
    #[serde(flatten)]
    prov: &'a Provenance,
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(mut out: W, prov: &Provenance) -> Result<Self> {
        serde_json::to_writer(&mut out, &Header { record: "header", prov })?;
        writeln!(out)?;
        Ok(Self { out })
    }

    pub fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        writeln!(self.out)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn create_ndjson(path: &Path, prov: &Provenance) -> Result<NdjsonWriter<BufWriter<File>>> {
    NdjsonWriter::new(BufWriter::new(File::create(path)?), prov)
}

/// Reads the provenance lines of a CSV file written by [`CsvWriter`].
pub fn read_csv_provenance(text: &str) -> Result<Provenance> {
    let mut hash = None;
    let mut version = None;
    let mut seed = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some((k, v)) = body.split_once('=') {
            match k {
                "manifest_hash" => hash = Some(v.to_string()),
                "version" => version = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                _ => {}
            }
        }
    }
    match (hash, version, seed) {
        (Some(manifest_hash), Some(version), Some(seed)) => Ok(Provenance {
            manifest_hash,
            version,
            seed,
        }),
        _ => Err(Error::IncompleteRecord("CSV provenance lines are missing".into())),
    }
}

/// Log-log plot of `(t + 1, d)` with an optional fitted power law.
pub fn loglog_svg(series: &[(f64, f64)], fit: Option<&RateFit>, title: &str, prov: &Provenance) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|p| p.1 > 0.0 && p.0 >= 0.0)
        .map(|&(t, d)| ((t + 1.0).log10(), d.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        "<!-- manifest_hash={} version={} seed={} -->",
        prov.manifest_hash, prov.version, prov.seed
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    x0 = x0.floor();
    x1 = x1.ceil().max(x0 + 1.0);
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for e in (x0 as i64)..=(x1 as i64) {
        let x = sx(e as f64);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">1e{e}</text>"#,
            h - pad + 16.0
        );
    }
    for e in (y0 as i64)..=(y1 as i64) {
        let y = sy(e as f64);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e{e}</text>"#,
            pad - 6.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">t + 1</text>"#,
        w / 2.0,
        h - 14.0
    );
    for &(x, y) in &pts {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            sx(x),
            sy(y)
        );
    }
    if let Some(f) = fit {
        let (a, b) = (f.burn_in.max(0.0) + 1.0, 10f64.powf(x1));
        let ya = (f.intercept + f.slope * a.ln()) / std::f64::consts::LN_10;
        let yb = (f.intercept + f.slope * b.ln()) / std::f64::consts::LN_10;
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
            sx(a.log10()),
            sy(ya.clamp(y0, y1)),
            sx(b.log10()),
            sy(yb.clamp(y0, y1))
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="44" font-family="sans-serif" font-size="12" text-anchor="end">slope {:.3}, R^2 {:.3}</text>"#,
            w - pad,
            f.slope,
            f.r_squared
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            manifest_hash: "ab".repeat(32),
            version: VERSION.into(),
            seed: 7,
        }
    }

    #[test]
    fn csv_round_trips_floats_and_provenance() {
        let mut w = CsvWriter::new(Vec::new(), &prov(), &["t", "x"]).unwrap();
        let x = 0.1 + 0.2;
        w.row(&[1.0, x]).unwrap();
        assert!(w.row(&[1.0]).is_err());
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(read_csv_provenance(&text).unwrap(), prov());
        let last = text.lines().last().unwrap();
        let parsed: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, x);
    }

    #[test]
    fn ndjson_header_then_records() {
        let mut w = NdjsonWriter::new(Vec::new(), &prov()).unwrap();
        w.record(&serde_json::json!({"t": 0.5})).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let h: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(h["record"], "header");
        assert_eq!(h["seed"], 7);
    }

    #[test]
    fn svg_is_well_formed() {
        let s: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 1.0 / (i as f64 + 1.0))).collect();
        let svg = loglog_svg(&s, None, "d(t) < 1", &prov());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;"));
        assert_eq!(svg.matches("<circle").count(), 20);
    }
}
