//! SVG figures: score distribution curves and the MAP heatmap.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stablemorph_core::metrics::{mean, sample_std};

use crate::error::{Error, Result};
use crate::evaluation::quality::read_raw_scores;
use crate::evaluation::scores::parse_map_tsv;
use crate::fsutil::{read_to_string, write_atomic};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const SAMPLES: usize = 200;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Gaussian kernel density estimate with Silverman's bandwidth.
pub fn kde(values: &[f64], xs: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let sd = if values.len() > 1 { sample_std(values) } else { 0.0 };
    let mut h = 1.06 * sd * n.powf(-0.2);
    if h.is_nan() || h <= 0.0 {
        h = 1e-3 * mean(values).abs().max(1.0);
    }
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    xs.iter()
        .map(|x| {
            values
                .iter()
                .map(|v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// One density curve per method over a shared axis.
pub fn distribution_svg(metric: &str, by_method: &BTreeMap<String, Vec<f64>>) -> String {
    let all = by_method.values().flatten().copied();
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.1).max(1e-3);
    lo -= pad;
    hi += pad;
    let xs: Vec<f64> = (0..SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64).collect();
    let curves: Vec<(&String, Vec<f64>)> = by_method.iter().map(|(m, v)| (m, kde(v, &xs))).collect();
    let ymax = curves
        .iter()
        .flat_map(|(_, ys)| ys.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let px = |x: f64| MARGIN + (x - lo) / (hi - lo) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - y / ymax * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(metric)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - MARGIN,
        W - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        H - MARGIN
    );
    for t in 0..=4 {
        let x = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.2}</text>"#,
            px(x),
            H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">density</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (method, ys)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            W - MARGIN - 120.0,
            W - MARGIN - 100.0,
            W - MARGIN - 95.0,
            ly + 4.0,
            escape(method)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn heat(v: f64) -> String {
    let t = (v / 100.0).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// Annotated heatmap: rows are attempt thresholds, columns system counts.
pub fn map_heatmap_svg(columns: &[String], rows: &[Vec<f64>]) -> String {
    let cell = 56.0;
    let left = 60.0;
    let top = 50.0;
    let w = left + cell * columns.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">MAP (%)</text>"#,
        w / 2.0
    );
    for (c, label) in columns.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">c={}</text>"#,
            left + cell * (c as f64 + 0.5),
            top - 8.0,
            escape(label)
        );
    }
    for (r, row) in rows.iter().enumerate() {
        let y = top + cell * r as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">r={}</text>"#,
            left - 8.0,
            y + cell / 2.0 + 4.0,
            r + 1
        );
        for (c, &v) in row.iter().enumerate() {
            let x = left + cell * c as f64;
            let ink = if v > 55.0 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.1}</text>"#,
                heat(v),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders a distribution plot for every `raw_<metric>.tsv` in
/// `report_dir`, and the MAP heatmap when `map_tsv` is given.
pub fn render_plots(report_dir: Option<&Path>, map_tsv: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(dir) = report_dir {
        let mut raws: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("raw_") && n.ends_with(".tsv"))
            })
            .collect();
        raws.sort();
        if raws.is_empty() {
            return Err(Error::input(format!("{}: no raw_<metric>.tsv files", dir.display())));
        }
        for raw in raws {
            let name = raw.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let metric = name.trim_start_matches("raw_");
            let data = read_raw_scores(&raw)?;
            let p = out_dir.join(format!("dist_{metric}.svg"));
            write_atomic(&p, distribution_svg(metric, &data).as_bytes())?;
            written.push(p);
        }
    }
    if let Some(map) = map_tsv {
        let (cols, rows) = parse_map_tsv(&read_to_string(map)?)?;
        let p = out_dir.join("map_heatmap.svg");
        write_atomic(&p, map_heatmap_svg(&cols, &rows).as_bytes())?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::input("nothing to plot: give a report directory or a MAP table"));
    }
    Ok(written)
}
