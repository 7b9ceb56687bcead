//! Shared domain vocabulary: tokenized inputs, prediction and replacement
//! distributions, and relevance vectors.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for every normalization check.
pub const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Word,
    Punctuation,
}

/// One resampling unit: a word or a punctuation mark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub surface: String,
    pub kind: UnitKind,
    /// Byte offsets into the owning input's text.
    pub span: Range<usize>,
}

/// A classification instance split into resampling units.
///
/// `spacing` holds the text before each unit plus the trailing text, so
/// `spacing[0] + units[0] + spacing[1] + ... + spacing[n]` is the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub id: String,
    pub text: String,
    pub units: Vec<Unit>,
    pub spacing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
}

impl TokenizedInput {
    /// Builds an input from already split surfaces, joined by single spaces.
    pub fn from_surfaces<S: AsRef<str>>(id: impl Into<String>, surfaces: &[S]) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut text = String::new();
        let mut units = Vec::with_capacity(surfaces.len());
        let mut spacing = Vec::with_capacity(surfaces.len() + 1);
        for (i, s) in surfaces.iter().enumerate() {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(Error::EmptyInput);
            }
            spacing.push(if i == 0 { String::new() } else { " ".to_string() });
            if i > 0 {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(s);
            units.push(Unit {
                surface: s.to_string(),
                kind: crate::tokenize::classify_surface(s),
                span: start..text.len(),
            });
        }
        spacing.push(String::new());
        Ok(TokenizedInput {
            id: id.into(),
            text,
            units,
            spacing,
            gold_label: None,
        })
    }

    pub fn with_gold_label(mut self, label: usize) -> Self {
        self.gold_label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.units.iter().map(|u| u.surface.clone()).collect()
    }

    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        for (gap, unit) in self.spacing.iter().zip(&self.units) {
            out.push_str(gap);
            out.push_str(&unit.surface);
        }
        if let Some(tail) = self.spacing.last() {
            out.push_str(tail);
        }
        out
    }

    /// Checks the structural invariants of the input.
    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.spacing.len() != self.units.len() + 1 {
            return Err(Error::InvariantViolation(format!(
                "spacing has {} entries for {} units",
                self.spacing.len(),
                self.units.len()
            )));
        }
        for (i, u) in self.units.iter().enumerate() {
            if u.surface.is_empty() || u.span.start >= u.span.end || u.span.end > self.text.len() {
                return Err(Error::InvariantViolation(format!("unit {i} has a bad span")));
            }
            if self.text.get(u.span.clone()) != Some(u.surface.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "unit {i} surface does not match its span"
                )));
            }
        }
        if self.reconstruct() != self.text {
            return Err(Error::InvariantViolation(
                "units and spacing do not reconstruct the text".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_position(&self, position: usize) -> Result<()> {
        if position >= self.units.len() {
            return Err(Error::IndexError {
                position,
                len: self.units.len(),
            });
        }
        Ok(())
    }
}

/// A validated probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PredictionDistribution {
    probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::ProtocolViolation(format!(
                "expected at least 2 class probabilities, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::ProtocolViolation(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::ProtocolViolation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(PredictionDistribution { probs })
    }

    pub fn uniform(class_count: usize) -> Self {
        PredictionDistribution {
            probs: vec![1.0 / class_count as f64; class_count],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Index and probability of the most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for PredictionDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PredictionDistribution::new(v)
    }
}

impl From<PredictionDistribution> for Vec<f64> {
    fn from(p: PredictionDistribution) -> Self {
        p.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    EmpiricalCounts,
    ExactProbabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub weight: f64,
}

/// Weighted replacement candidates for one masked position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementDistribution {
    pub position: usize,
    pub candidates: Vec<Candidate>,
    pub kind: DistributionKind,
}

impl ReplacementDistribution {
    /// Validates and builds a distribution. `budget` is required for
    /// empirical counts and must equal the total count.
    pub fn new(
        position: usize,
        candidates: Vec<Candidate>,
        kind: DistributionKind,
        budget: Option<usize>,
    ) -> Result<Self> {
        let dist = ReplacementDistribution {
            position,
            candidates,
            kind,
        };
        dist.validate(budget)?;
        Ok(dist)
    }

    pub fn validate(&self, budget: Option<usize>) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::BackendError("language model returned no candidates".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::ProtocolViolation(format!(
                    "candidate {:?} has non-positive weight {}",
                    c.token, c.weight
                )));
            }
            if !seen.insert(c.token.as_str()) {
                return Err(Error::ProtocolViolation(format!(
                    "duplicate candidate {:?}",
                    c.token
                )));
            }
        }
        let total = self.total_weight();
        match self.kind {
            DistributionKind::ExactProbabilities => {
                if (total - 1.0).abs() > PROB_TOLERANCE {
                    return Err(Error::ProtocolViolation(format!(
                        "exact probabilities sum to {total}"
                    )));
                }
            }
            DistributionKind::EmpiricalCounts => {
                if let Some(c) = self.candidates.iter().find(|c| c.weight.fract() != 0.0) {
                    return Err(Error::ProtocolViolation(format!(
                        "count for {:?} is not an integer: {}",
                        c.token, c.weight
                    )));
                }
                if let Some(budget) = budget {
                    if total != budget as f64 {
                        return Err(Error::ProtocolViolation(format!(
                            "counts sum to {total}, expected budget {budget}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.candidates.iter().map(|c| c.weight).sum()
    }

    /// Weights scaled to sum to one (counts divided by the budget).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total = self.total_weight();
        self.candidates.iter().map(|c| c.weight / total).collect()
    }

    pub fn weight_of(&self, token: &str) -> Option<f64> {
        self.candidates.iter().find(|c| c.token == token).map(|c| c.weight)
    }
}

/// Explanation methods known to the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Olm,
    OlmS,
    Delete,
    Unk,
    SensitivityAnalysis,
    GradientTimesInput,
    IntegratedGradients,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Olm,
        Method::OlmS,
        Method::Delete,
        Method::Unk,
        Method::SensitivityAnalysis,
        Method::GradientTimesInput,
        Method::IntegratedGradients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Olm => "olm",
            Method::OlmS => "olm_s",
            Method::Delete => "delete",
            Method::Unk => "unk",
            Method::SensitivityAnalysis => "sensitivity_analysis",
            Method::GradientTimesInput => "gradient_times_input",
            Method::IntegratedGradients => "integrated_gradients",
        }
    }

    /// Short column label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Olm => "OLM",
            Method::OlmS => "OLM-S",
            Method::Delete => "Del",
            Method::Unk => "UNK",
            Method::SensitivityAnalysis => "Sen",
            Method::GradientTimesInput => "G*I",
            Method::IntegratedGradients => "IG",
        }
    }

    /// Delete, UNK and OLM: relevance is a difference of predictions.
    pub fn is_occlusion(self) -> bool {
        matches!(self, Method::Olm | Method::Delete | Method::Unk)
    }

    pub fn uses_language_model(self) -> bool {
        matches!(self, Method::Olm | Method::OlmS)
    }

    pub fn is_gradient(self) -> bool {
        matches!(
            self,
            Method::SensitivityAnalysis | Method::GradientTimesInput | Method::IntegratedGradients
        )
    }

    pub fn is_non_negative(self) -> bool {
        matches!(self, Method::OlmS | Method::SensitivityAnalysis)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '*'], "_");
        let m = match norm.as_str() {
            "olm" => Method::Olm,
            "olm_s" | "olms" => Method::OlmS,
            "delete" | "del" => Method::Delete,
            "unk" => Method::Unk,
            "sensitivity_analysis" | "sensitivity" | "sen" => Method::SensitivityAnalysis,
            "gradient_times_input" | "gradient_input" | "g_i" | "gxi" => Method::GradientTimesInput,
            "integrated_gradients" | "ig" => Method::IntegratedGradients,
            _ => return Err(Error::ConfigError(format!("unknown method {s:?}"))),
        };
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    Sample,
    Exact,
}

impl FromStr for FillMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sample" => Ok(FillMode::Sample),
            "exact" => Ok(FillMode::Exact),
            _ => Err(Error::ConfigError(format!("unknown mode {s:?}"))),
        }
    }
}

/// Provenance recorded alongside relevance values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMeta {
    /// f_c(x) for the explained class.
    pub original_prediction: f64,
    /// Whether the model's outputs are probability distributions.
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FillMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk_token: Option<String>,
}

/// One relevance (or sensitivity) per unit for a single explained class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub input_id: String,
    pub method: Method,
    pub class_index: usize,
    pub values: Vec<f64>,
    /// Positions that are not explanation features (e.g. sentence separators).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<usize>,
    pub meta: RelevanceMeta,
}

impl RelevanceVector {
    pub fn new(
        input_id: impl Into<String>,
        method: Method,
        class_index: usize,
        values: Vec<f64>,
        meta: RelevanceMeta,
    ) -> Result<Self> {
        let rv = RelevanceVector {
            input_id: input_id.into(),
            method,
            class_index,
            values,
            excluded: Vec::new(),
            meta,
        };
        rv.validate()?;
        Ok(rv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::ShapeError("relevance vector is empty".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("non-finite relevance {v}")));
        }
        if self.method.is_occlusion() && self.meta.normalized {
            let p = self.meta.original_prediction;
            for (i, &v) in self.values.iter().enumerate() {
                if v > p + PROB_TOLERANCE || v < p - 1.0 - PROB_TOLERANCE {
                    return Err(Error::InvariantViolation(format!(
                        "{} relevance {v} at unit {i} outside [{}, {p}]",
                        self.method,
                        p - 1.0
                    )));
                }
            }
        }
        if self.method.is_non_negative() {
            if let Some(v) = self.values.iter().find(|v| **v < 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "{} value {v} is negative",
                    self.method
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at explanation positions only.
    pub fn feature_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.excluded.contains(i))
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
