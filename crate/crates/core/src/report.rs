//! Audit summaries and heatmap rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{diagonal_zscores, philautia_scores, standardize, DiagonalZ, ScoreMatrix, StandardizedMatrix};
use crate::model::{ModelId, Setting};

/// Self-scores more than this many column standard deviations above the
/// column mean are flagged.
pub const Z_FLAG: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub setting: Setting,
    pub phi: ScoreMatrix,
    pub phi_tilde: StandardizedMatrix,
    pub philautia: BTreeMap<ModelId, f64>,
    pub zscores: BTreeMap<ModelId, DiagonalZ>,
    pub notes: Vec<String>,
}

/// Standardises `phi` and collects the per-model diagnostics.
pub fn build_audit(phi: ScoreMatrix) -> Result<AuditReport> {
    let phi_tilde = standardize(&phi)?;
    let philautia = philautia_scores(&phi_tilde)?;
    let zscores = diagonal_zscores(&phi_tilde)?;
    let mut notes = Vec::new();
    for id in &phi_tilde.degenerate_columns {
        notes.push(format!("evaluator `{id}` gives every generator the same mean score; its column is zero"));
    }
    for id in &phi_tilde.degenerate_rows {
        notes.push(format!("generator `{id}` has a constant standardised row; the row is zero"));
    }
    for id in phi.generators.iter().filter(|g| !philautia.contains_key(*g)) {
        notes.push(format!("generator `{id}` is not an evaluator and has no philautia score"));
    }
    for id in phi.evaluators.iter().filter(|e| !philautia.contains_key(*e)) {
        notes.push(format!("evaluator `{id}` is not a generator and has no philautia score"));
    }
    for (id, z) in &zscores {
        if z.z.is_none() {
            notes.push(format!("column `{id}` has zero spread; its z-score is undefined"));
        }
    }
    Ok(AuditReport { setting: phi.setting, phi, phi_tilde, philautia, zscores, notes })
}

impl AuditReport {
    /// Models in descending philautia order (ties by id).
    pub fn ranking(&self) -> Vec<(&ModelId, f64)> {
        let mut rows: Vec<_> = self.philautia.iter().map(|(k, v)| (k, *v)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    pub fn flagged(&self) -> Vec<&ModelId> {
        self.zscores
            .iter()
            .filter(|(_, z)| z.z.is_some_and(|z| z > Z_FLAG))
            .map(|(id, _)| id)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Validation(format!("unknown report format `{other}`"))),
        }
    }
}

/// Two-decimal display value with negative zero folded away.
pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn csv_report(r: &AuditReport) -> String {
    // Shortest round-trip float formatting keeps the table lossless.
    let m = &r.phi_tilde;
    let mut out = String::from("generator");
    for e in &m.evaluators {
        out.push(',');
        out.push_str(e.as_str());
    }
    out.push('\n');
    for (g, row) in m.generators.iter().zip(&m.values) {
        out.push_str(g.as_str());
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

fn markdown_report(r: &AuditReport) -> String {
    let m = &r.phi_tilde;
    let mut out = String::new();
    let _ = writeln!(out, "# Self-preference audit ({})\n", r.setting);
    let _ = writeln!(out, "{} generators x {} evaluators.\n", m.generators.len(), m.evaluators.len());
    out.push_str("## Philautia scores\n\n");
    out.push_str("| Rank | Model | Philautia | Column mean | Column std | z | Flag |\n");
    out.push_str("|---:|---|---:|---:|---:|---:|---|\n");
    for (rank, (id, score)) in r.ranking().into_iter().enumerate() {
        let z = &r.zscores[id];
        let (zs, flag) = match z.z {
            Some(v) if v > Z_FLAG => (format!("**{}**", fmt2(v)), "**z > 2**"),
            Some(v) => (fmt2(v), ""),
            None => ("n/a".into(), ""),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            rank + 1,
            id,
            fmt2(score),
            fmt2(z.col_mean),
            fmt2(z.col_std),
            zs,
            flag
        );
    }
    let flagged = r.flagged();
    out.push('\n');
    if flagged.is_empty() {
        out.push_str("No self-score lies more than two column standard deviations above its column mean.\n");
    } else {
        let names: Vec<String> = flagged.iter().map(|id| format!("`{id}`")).collect();
        let _ = writeln!(out, "Flagged (z > 2): {}.", names.join(", "));
    }
    let positive = r.philautia.values().filter(|v| **v > 0.0).count();
    let _ = writeln!(out, "Positive philautia scores: {positive} of {}.\n", r.philautia.len());

    out.push_str("## Standardized matrix\n\n| Generator \\ Evaluator |");
    for e in &m.evaluators {
        let _ = write!(out, " {e} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(m.evaluators.len()));
    out.push('\n');
    for (g, row) in m.generators.iter().zip(&m.values) {
        let _ = write!(out, "| {g} |");
        for (e, v) in m.evaluators.iter().zip(row) {
            if e == g {
                let _ = write!(out, " **{}** |", fmt2(*v));
            } else {
                let _ = write!(out, " {} |", fmt2(*v));
            }
        }
        out.push('\n');
    }
    out.push_str("\n## Notes\n\n");
    if r.notes.is_empty() {
        out.push_str("- none\n");
    }
    for n in &r.notes {
        let _ = writeln!(out, "- {n}");
    }
    out
}

pub fn render_report(report: &AuditReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => csv_report(report),
        ReportFormat::Markdown => markdown_report(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    })
}

pub(crate) fn write_text(out: &Path, text: &str) -> Result<usize> {
    std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(text.len())
}

/// Writes the report and returns the number of bytes written.
pub fn emit_report(report: &AuditReport, format: ReportFormat, out: &Path) -> Result<usize> {
    write_text(out, &render_report(report, format)?)
}

/// Colour mapping for heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorScale {
    /// Blue below zero, white at zero, red above; symmetric in the largest magnitude.
    Diverging,
    /// Blue at the minimum, white at the midpoint, red at the maximum.
    MinMax,
}

const BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const RED: (f64, f64, f64) = (178.0, 24.0, 43.0);

/// Maps t in [-1, 1] to a hex colour.
fn diverging_color(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let end = if t < 0.0 { BLUE } else { RED };
    let a = t.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const CELL_W: usize = 56;
const CELL_H: usize = 30;
const CHAR_W: usize = 7;

/// Renders a labelled matrix as an SVG 1.1 heatmap.
pub fn render_heatmap_svg(
    rows: &[ModelId],
    cols: &[ModelId],
    values: &[Vec<f64>],
    scale: ColorScale,
    title: Option<&str>,
) -> Result<String> {
    if values.len() != rows.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: rows.len() });
    }
    if let Some(r) = values.iter().find(|r| r.len() != cols.len()) {
        return Err(Error::LengthMismatch { left: r.len(), right: cols.len() });
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap values must be finite".into()));
    }
    let flat = || values.iter().flatten().copied();
    let (lo, hi, to_t): (f64, f64, Box<dyn Fn(f64) -> f64>) = match scale {
        ColorScale::Diverging => {
            let m = flat().fold(0.0f64, |a, v| a.max(v.abs()));
            let f = move |v: f64| if m > 0.0 { v / m } else { 0.0 };
            (-m, m, Box::new(f))
        }
        ColorScale::MinMax => {
            let lo = flat().fold(f64::INFINITY, f64::min);
            let hi = flat().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
            let f = move |v: f64| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 };
            (lo, hi, Box::new(f))
        }
    };

    let label_w = rows.iter().map(|r| r.as_str().chars().count()).max().unwrap_or(0) * CHAR_W + 12;
    let head_h = cols.iter().map(|c| c.as_str().chars().count()).max().unwrap_or(0) * CHAR_W * 7 / 10 + 16;
    let title_h = if title.is_some() { 24 } else { 0 };
    let x0 = label_w;
    let y0 = title_h + head_h;
    let grid_w = cols.len() * CELL_W;
    let grid_h = rows.len() * CELL_H;
    let legend_x = x0 + grid_w + 20;
    let legend_h = grid_h.max(60);
    let width = legend_x + 16 + 60;
    let height = y0 + legend_h + 12;

    let mut s = String::new();
    let _ = writeln!(s, r##"<?xml version="1.0" encoding="UTF-8"?>"##);
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="11">"##
    );
    s.push_str("<defs>\n<linearGradient id=\"legend\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\n");
    for stop in 0..=4 {
        let t = -1.0 + stop as f64 * 0.5;
        let _ = writeln!(s, r##"<stop offset="{}%" stop-color="{}"/>"##, stop * 25, diverging_color(t));
    }
    s.push_str("</linearGradient>\n</defs>\n");
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
    if let Some(t) = title {
        let _ = writeln!(s, r##"<text x="{x0}" y="16" font-size="13" font-weight="bold">{}</text>"##, xml_escape(t));
    }
    for (j, c) in cols.iter().enumerate() {
        let cx = x0 + j * CELL_W + CELL_W / 2;
        let cy = y0 - 6;
        let _ = writeln!(
            s,
            r##"<text x="{cx}" y="{cy}" transform="rotate(-45 {cx} {cy})">{}</text>"##,
            xml_escape(c.as_str())
        );
    }
    for (i, (r, row)) in rows.iter().zip(values).enumerate() {
        let y = y0 + i * CELL_H;
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="end">{}</text>"##,
            x0 - 6,
            y + CELL_H / 2 + 4,
            xml_escape(r.as_str())
        );
        for (j, v) in row.iter().enumerate() {
            let x = x0 + j * CELL_W;
            let t = to_t(*v);
            let ink = if t.abs() > 0.6 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}" stroke="#ffffff"/>"##,
                diverging_color(t)
            );
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"##,
                x + CELL_W / 2,
                y + CELL_H / 2 + 4,
                fmt2(*v)
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{legend_x}" y="{y0}" width="16" height="{legend_h}" fill="url(#legend)" stroke="#888888"/>"##
    );
    let mid = match scale {
        ColorScale::Diverging => 0.0,
        ColorScale::MinMax => (lo + hi) / 2.0,
    };
    for (label, frac) in [(hi, 0usize), (mid, 1), (lo, 2)] {
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}">{}</text>"##,
            legend_x + 20,
            y0 + frac * legend_h / 2 + 4,
            fmt2(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_heatmap_svg(
    rows: &[ModelId],
    cols: &[ModelId],
    values: &[Vec<f64>],
    scale: ColorScale,
    title: Option<&str>,
    out: &Path,
) -> Result<usize> {
    write_text(out, &render_heatmap_svg(rows, cols, values, scale, title)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<ModelId> {
        (0..n).map(|i| ModelId::new(format!("m{i}")).unwrap()).collect()
    }

    #[test]
    fn colour_endpoints() {
        assert_eq!(diverging_color(0.0), "#ffffff");
        assert_eq!(diverging_color(-1.0), "#2166ac");
        assert_eq!(diverging_color(1.0), "#b2182b");
    }

    #[test]
    fn two_by_two_is_stable() {
        let v = vec![vec![1.0, -1.0], vec![0.0, 0.0]];
        let a = render_heatmap_svg(&ids(2), &ids(2), &v, ColorScale::Diverging, None).unwrap();
        let b = render_heatmap_svg(&ids(2), &ids(2), &v, ColorScale::Diverging, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<rect x=").count(), 4 + 2);
        assert!(a.contains(">-1.00<") && a.contains(">1.00<") && a.contains(">0.00<"));
        assert!(a.contains("url(#legend)"));
    }

    #[test]
    fn non_finite_rejected() {
        let v = vec![vec![f64::NAN]];
        assert!(render_heatmap_svg(&ids(1), &ids(1), &v, ColorScale::Diverging, None).is_err());
    }

    #[test]
    fn labels_are_escaped() {
        let r = vec![ModelId::new("a<b").unwrap()];
        let s = render_heatmap_svg(&r, &r, &[vec![0.5]], ColorScale::MinMax, Some("x&y")).unwrap();
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
    }

    #[test]
    fn fmt2_folds_negative_zero() {
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(fmt2(1.375), "1.38");
    }
}
