//! Heatmaps (HTML and 24-bit ANSI) and aligned text tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{MethodCorrelationMatrix, SignificanceReport};
use crate::axioms::{AxiomReport, Verdict};
use crate::error::{Error, Result};
use crate::types::{RelevanceVector, TokenizedInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const WHITE: Rgb = Rgb(255, 255, 255);
    pub const RED: Rgb = Rgb(255, 0, 0);
    pub const BLUE: Rgb = Rgb(0, 0, 255);
}

fn towards(target: Rgb, fraction: f64) -> Rgb {
    let channel = |c: u8| 255 - ((255.0 - f64::from(c)) * fraction).round() as u8;
    Rgb(channel(target.0), channel(target.1), channel(target.2))
}

fn color_for(value: f64, max_abs: f64, positive: Rgb, negative: Rgb) -> Result<Rgb> {
    if !value.is_finite() || !max_abs.is_finite() || max_abs < 0.0 {
        return Err(Error::ShapeError(format!("cannot color {value} against max {max_abs}")));
    }
    if value == 0.0 {
        return Ok(Rgb::WHITE);
    }
    if max_abs == 0.0 {
        return Err(Error::ShapeError(format!("nonzero value {value} with max_abs 0")));
    }
    let fraction = value.abs() / max_abs;
    if fraction > 1.0 + 1e-12 {
        return Err(Error::ShapeError(format!("|{value}| exceeds max_abs {max_abs}")));
    }
    let target = if value > 0.0 { positive } else { negative };
    Ok(towards(target, fraction.min(1.0)))
}

/// White for 0, red at `max_abs`, blue at `-max_abs`.
pub fn relevance_to_rgb(value: f64, max_abs: f64) -> Result<Rgb> {
    color_for(value, max_abs, Rgb::RED, Rgb::BLUE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerExplanationMaxAbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub input: TokenizedInput,
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub positive_color: Rgb,
    pub negative_color: Rgb,
    /// Shown before the units, e.g. the method label.
    pub label: Option<String>,
}

impl HeatmapSpec {
    pub fn new(input: TokenizedInput, values: Vec<f64>) -> Result<Self> {
        if values.len() != input.len() {
            return Err(Error::ShapeError(format!(
                "{} values for {} units",
                values.len(),
                input.len()
            )));
        }
        Ok(HeatmapSpec {
            input,
            values,
            normalization: Normalization::PerExplanationMaxAbs,
            positive_color: Rgb::RED,
            negative_color: Rgb::BLUE,
            label: None,
        })
    }

    pub fn from_relevance(input: TokenizedInput, r: &RelevanceVector) -> Result<Self> {
        let mut spec = Self::new(input, r.values.clone())?;
        spec.label = Some(r.method.label().to_string());
        Ok(spec)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn colors(&self) -> Result<Vec<Rgb>> {
        if self.values.len() != self.input.len() {
            return Err(Error::ShapeError(format!(
                "{} values for {} units",
                self.values.len(),
                self.input.len()
            )));
        }
        let max = self.max_abs();
        self.values
            .iter()
            .map(|&v| color_for(v, max, self.positive_color, self.negative_color))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapFormat {
    Ansi,
    Html,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ansi" | "terminal" => Ok(HeatmapFormat::Ansi),
            "html" => Ok(HeatmapFormat::Html),
            other => Err(Error::ConfigError(format!("unknown heatmap format {other:?}"))),
        }
    }
}

/// Six significant digits, parseable back with `str::parse::<f64>`.
pub fn format_value(v: f64) -> String {
    format!("{v:.5e}")
}

pub fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn render_heatmap(spec: &HeatmapSpec, format: HeatmapFormat) -> Result<String> {
    let colors = spec.colors()?;
    let max = spec.max_abs();
    let mut out = String::new();
    match format {
        HeatmapFormat::Html => {
            write!(out, "<div class=\"olm-heatmap\" data-input-id=\"{}\"", html_escape(&spec.input.id)).unwrap();
            if let Some(label) = &spec.label {
                write!(out, " data-method=\"{}\"", html_escape(label)).unwrap();
            }
            out.push_str(">\n");
            if let Some(label) = &spec.label {
                writeln!(out, "<span class=\"olm-label\">{}</span>", html_escape(label)).unwrap();
            }
            for (i, (unit, rgb)) in spec.input.units.iter().zip(&colors).enumerate() {
                if i > 0 && !spec.input.spacing[i].is_empty() {
                    out.push(' ');
                }
                write!(
                    out,
                    "<span style=\"background-color: rgb({},{},{})\" data-relevance=\"{}\">{}</span>",
                    rgb.0,
                    rgb.1,
                    rgb.2,
                    format_value(spec.values[i]),
                    html_escape(&unit.surface)
                )
                .unwrap();
            }
            writeln!(out, "\n<span class=\"olm-max\">max {}</span>", format_value(max)).unwrap();
            out.push_str("</div>\n");
        }
        HeatmapFormat::Ansi => {
            if let Some(label) = &spec.label {
                write!(out, "{label}: ").unwrap();
            }
            for (i, (unit, rgb)) in spec.input.units.iter().zip(&colors).enumerate() {
                if i > 0 && !spec.input.spacing[i].is_empty() {
                    out.push(' ');
                }
                write!(out, "\x1b[48;2;{};{};{}m\x1b[30m{}\x1b[0m", rgb.0, rgb.1, rgb.2, unit.surface).unwrap();
            }
            writeln!(out, "  (max {})", format_value(max)).unwrap();
        }
    }
    Ok(out)
}

/// Recovers the values embedded in an HTML heatmap.
pub fn parse_html_relevance(html: &str) -> Result<Vec<f64>> {
    const KEY: &str = "data-relevance=\"";
    let mut values = Vec::new();
    let mut rest = html;
    while let Some(start) = rest.find(KEY) {
        rest = &rest[start + KEY.len()..];
        let end = rest
            .find('"')
            .ok_or_else(|| Error::ShapeError("unterminated data-relevance attribute".into()))?;
        values.push(
            rest[..end]
                .parse()
                .map_err(|_| Error::ShapeError(format!("bad relevance {:?}", &rest[..end])))?,
        );
        rest = &rest[end..];
    }
    Ok(values)
}

/// Fixed-width text rendering for reports.
pub trait RenderTable {
    fn render_table(&self) -> String;
}

pub fn render_table<T: RenderTable + ?Sized>(report: &T) -> String {
    report.render_table()
}

fn pad_row(out: &mut String, first: &str, first_width: usize, cells: &[String], width: usize) {
    write!(out, "{first:<first_width$}").unwrap();
    for c in cells {
        write!(out, "  {c:>width$}").unwrap();
    }
    out.push('\n');
}

impl RenderTable for MethodCorrelationMatrix {
    fn render_table(&self) -> String {
        let labels: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
        let first = labels.iter().map(|l| l.len()).max().unwrap_or(0);
        let width = labels.iter().map(|l| l.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let header: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        pad_row(&mut out, "", first, &header, width);
        for (label, row) in labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
            pad_row(&mut out, label, first, &cells, width);
        }
        let skipped = self.total_skipped();
        if skipped > 0 {
            writeln!(out, "skipped {skipped} undefined per-input correlations").unwrap();
        }
        out
    }
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

impl RenderTable for SignificanceReport {
    fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "method {}, filter: {}p >= {:.2}",
            self.method.label(),
            if self.filter.require_correct { "correct, " } else { "" },
            self.filter.min_probability
        )
        .unwrap();
        let groups: Vec<String> = [&self.group_a, &self.group_b]
            .iter()
            .map(|g| format!("{} (n={})", g.label, g.sample_count))
            .collect();
        let first = groups.iter().map(|s| s.chars().count()).max().unwrap_or(0).max("p-value".len());
        let width = 9;
        let header: Vec<String> = self.aggregations.iter().map(|a| a.name().to_string()).collect();
        pad_row(&mut out, "", first, &header, width);
        for (g, label) in [&self.group_a, &self.group_b].iter().zip(&groups) {
            let cells: Vec<String> = g.statistics.iter().map(|s| format!("{:.4}", s.mean)).collect();
            pad_row(&mut out, label, first, &cells, width);
        }
        let t: Vec<String> = self.tests.iter().map(|t| format!("{:.3}", t.t_statistic)).collect();
        pad_row(&mut out, "t", first, &t, width);
        let p: Vec<String> = self.tests.iter().map(|t| format_p(t.p_value)).collect();
        pad_row(&mut out, "p-value", first, &p, width);
        out
    }
}

/// Pass/fail matrix with methods as rows and axioms as columns.
impl RenderTable for [AxiomReport] {
    fn render_table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut axioms: Vec<&str> = Vec::new();
        for r in self {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !axioms.contains(&r.axiom.name()) {
                axioms.push(r.axiom.name());
            }
        }
        let first = methods.iter().map(|m| m.len()).max().unwrap_or(0);
        let width = axioms.iter().map(|a| a.len()).max().unwrap_or(0).max(14);
        let mut out = String::new();
        let header: Vec<String> = axioms.iter().map(|a| a.to_string()).collect();
        pad_row(&mut out, "", first, &header, width);
        for m in &methods {
            let cells: Vec<String> = axioms
                .iter()
                .map(|a| {
                    self.iter()
                        .find(|r| r.method == *m && r.axiom.name() == *a)
                        .map_or_else(
                            || "-".to_string(),
                            |r| match r.verdict {
                                Verdict::Satisfied => format!("pass {:.1e}", r.max_deviation),
                                Verdict::Violated => format!("FAIL {:.1e}", r.max_deviation),
                                Verdict::NotApplicable => "n/a".to_string(),
                            },
                        )
                })
                .collect();
            pad_row(&mut out, m, first, &cells, width);
        }
        out
    }
}
