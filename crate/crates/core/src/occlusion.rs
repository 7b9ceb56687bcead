//! Occlusion relevance: Delete, UNK, OLM and OLM-S.
//!
//! Every method is evaluated through a [`ResampleTrace`]: the set of
//! replacement inputs for one position together with their weights and full
//! per-class predictions. Delete and UNK have a single replacement with
//! weight one; OLM draws replacements from a masked language model. The
//! relevance for class `c` is then
//!
//! ```text
//! r_c(x_i) = f_c(x) - Σ_j w_j f_c(x with unit i replaced by candidate j)
//! ```
//!
//! and OLM-S is the weighted standard deviation of the same predictions.
//! Because one trace is shared by all classes, relevances of a normalized
//! classifier sum to zero over classes.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Classifier, MaskedLm};
use crate::types::{
    DistributionKind, FillMode, Method, RelevanceMeta, RelevanceVector, ReplacementDistribution,
    TokenizedInput,
};

pub const DEFAULT_UNK_TOKEN: &str = "<UNK>";
pub const DEFAULT_BUDGET: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub method: Method,
    pub unk_token: String,
    pub budget: usize,
    pub mode: FillMode,
    pub seed: u64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            method: Method::Olm,
            unk_token: DEFAULT_UNK_TOKEN.to_string(),
            budget: DEFAULT_BUDGET,
            mode: FillMode::Sample,
            seed: 0,
        }
    }
}

impl OcclusionConfig {
    pub fn new(method: Method) -> Self {
        OcclusionConfig {
            method,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: FillMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.method.is_occlusion() || self.method == Method::OlmS) {
            return Err(Error::ConfigError(format!(
                "{} is not an occlusion method",
                self.method
            )));
        }
        if self.budget == 0 {
            return Err(Error::ConfigError("budget must be at least 1".into()));
        }
        if self.unk_token.is_empty() {
            return Err(Error::ConfigError("unk token must be non-empty".into()));
        }
        Ok(())
    }
}

/// Per-position RNG seed: `seed ⊕ FNV-1a(input_id, position)`, independent of
/// scheduling order.
pub fn derive_seed(seed: u64, input_id: &str, position: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in input_id
        .as_bytes()
        .iter()
        .chain(&[0xff])
        .chain(&(position as u64).to_le_bytes())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    seed ^ h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Replacement surface; empty for deletion.
    pub token: String,
    /// Raw weight as returned (a count or a probability).
    pub weight: f64,
    /// Full per-class model output on the replaced input.
    pub prediction: Vec<f64>,
}

/// All replacements evaluated for one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleTrace {
    pub position: usize,
    pub kind: DistributionKind,
    pub entries: Vec<TraceEntry>,
}

impl ResampleTrace {
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        self.entries.iter().map(|e| e.weight / total).collect()
    }

    /// Σ_j w_j f_c(x̂_j)
    pub fn expected_prediction(&self, class: usize) -> f64 {
        self.normalized_weights()
            .iter()
            .zip(&self.entries)
            .map(|(w, e)| w * e.prediction[class])
            .sum()
    }

    /// f_c(x) − Σ_j w_j f_c(x̂_j)
    pub fn relevance(&self, original: f64, class: usize) -> f64 {
        original - self.expected_prediction(class)
    }

    /// sqrt(Σ_j w_j (f_c(x̂_j) − μ)²)
    pub fn sensitivity(&self, class: usize) -> f64 {
        let mu = self.expected_prediction(class);
        self.normalized_weights()
            .iter()
            .zip(&self.entries)
            .map(|(w, e)| w * (e.prediction[class] - mu).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Thread-safe memo of model outputs keyed by unit sequence.
#[derive(Default)]
pub struct PredictionCache {
    map: Mutex<HashMap<Vec<String>, Vec<f64>>>,
}

impl PredictionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Outputs for every sequence, evaluating only the ones not seen before.
    pub fn evaluate(&self, model: &dyn Classifier, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let misses: Vec<Vec<String>> = {
            let map = self.map.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            batch
                .iter()
                .filter(|units| !map.contains_key(*units) && seen.insert(*units))
                .cloned()
                .collect()
        };
        let fresh = model::evaluate_batch(model, &misses)?;
        let mut map = self.map.lock().unwrap();
        for (units, out) in misses.into_iter().zip(fresh) {
            map.insert(units, out);
        }
        Ok(batch.iter().map(|units| map[units].clone()).collect())
    }
}

fn replaced(units: &[String], position: usize, token: Option<&str>) -> Vec<String> {
    let mut out = units.to_vec();
    match token {
        Some(t) => out[position] = t.to_string(),
        None => {
            out.remove(position);
        }
    }
    out
}

/// Draws the replacement distribution OLM uses for `position`.
pub fn resample(
    lm: &dyn MaskedLm,
    input: &TokenizedInput,
    position: usize,
    config: &OcclusionConfig,
) -> Result<ReplacementDistribution> {
    let seed = derive_seed(config.seed, &input.id, position);
    model::fill_mask(lm, input, position, config.budget, config.mode, seed)
}

/// Evaluates every candidate of `dist` in place of unit `position`.
pub fn trace_from_distribution(
    model: &dyn Classifier,
    input: &TokenizedInput,
    position: usize,
    dist: &ReplacementDistribution,
    cache: &PredictionCache,
) -> Result<ResampleTrace> {
    input.check_position(position)?;
    if dist.candidates.is_empty() {
        return Err(Error::BackendError("language model returned no candidates".into()));
    }
    let units = input.surfaces();
    let batch: Vec<Vec<String>> = dist
        .candidates
        .iter()
        .map(|c| replaced(&units, position, Some(&c.token)))
        .collect();
    let predictions = cache.evaluate(model, &batch)?;
    Ok(ResampleTrace {
        position,
        kind: dist.kind,
        entries: dist
            .candidates
            .iter()
            .zip(predictions)
            .map(|(c, prediction)| TraceEntry {
                token: c.token.clone(),
                weight: c.weight,
                prediction,
            })
            .collect(),
    })
}

/// Builds the trace the configured method uses for one position.
pub fn position_trace(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    position: usize,
    config: &OcclusionConfig,
    cache: &PredictionCache,
) -> Result<ResampleTrace> {
    input.check_position(position)?;
    let single = |token: Option<&str>| -> Result<ResampleTrace> {
        let units = replaced(&input.surfaces(), position, token);
        let prediction = cache.evaluate(model, &[units])?.remove(0);
        Ok(ResampleTrace {
            position,
            kind: DistributionKind::ExactProbabilities,
            entries: vec![TraceEntry {
                token: token.unwrap_or_default().to_string(),
                weight: 1.0,
                prediction,
            }],
        })
    };
    match config.method {
        Method::Delete => {
            if input.len() < 2 {
                return Err(Error::DegenerateInput(
                    "deleting the only unit leaves an empty input".into(),
                ));
            }
            single(None)
        }
        Method::Unk => single(Some(&config.unk_token)),
        Method::Olm | Method::OlmS => {
            let lm = lm.ok_or_else(|| {
                Error::ConfigError(format!("{} needs a language model", config.method))
            })?;
            let dist = resample(lm, input, position, config)?;
            trace_from_distribution(model, input, position, &dist, cache)
        }
        other => Err(Error::ConfigError(format!("{other} is not an occlusion method"))),
    }
}

fn original_output(model: &dyn Classifier, input: &TokenizedInput, cache: &PredictionCache) -> Result<Vec<f64>> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(cache.evaluate(model, &[input.surfaces()])?.remove(0))
}

fn single_position(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    position: usize,
    class: usize,
    config: &OcclusionConfig,
) -> Result<(f64, ResampleTrace)> {
    config.validate()?;
    model.info().check_class(class)?;
    let cache = PredictionCache::new();
    let original = original_output(model, input, &cache)?[class];
    let trace = position_trace(model, lm, input, position, config, &cache)?;
    let value = match config.method {
        Method::OlmS => trace.sensitivity(class),
        _ => trace.relevance(original, class),
    };
    Ok((value, trace))
}

/// f_c(x) − f_c(x without unit `position`).
pub fn occlude_delete(model: &dyn Classifier, input: &TokenizedInput, position: usize, class: usize) -> Result<f64> {
    single_position(model, None, input, position, class, &OcclusionConfig::new(Method::Delete)).map(|r| r.0)
}

/// f_c(x) − f_c(x with unit `position` replaced by `unk_token`).
pub fn occlude_unk(
    model: &dyn Classifier,
    input: &TokenizedInput,
    position: usize,
    class: usize,
    unk_token: &str,
) -> Result<f64> {
    let config = OcclusionConfig {
        unk_token: unk_token.to_string(),
        ..OcclusionConfig::new(Method::Unk)
    };
    single_position(model, None, input, position, class, &config).map(|r| r.0)
}

/// OLM relevance: f_c(x) minus the LM-weighted mean prediction over replacements.
pub fn olm_relevance(
    model: &dyn Classifier,
    lm: &dyn MaskedLm,
    input: &TokenizedInput,
    position: usize,
    class: usize,
    config: &OcclusionConfig,
) -> Result<(f64, ResampleTrace)> {
    let config = OcclusionConfig {
        method: Method::Olm,
        ..config.clone()
    };
    single_position(model, Some(lm), input, position, class, &config)
}

/// OLM-S: weighted standard deviation of predictions over replacements.
pub fn olm_s_sensitivity(
    model: &dyn Classifier,
    lm: &dyn MaskedLm,
    input: &TokenizedInput,
    position: usize,
    class: usize,
    config: &OcclusionConfig,
) -> Result<(f64, ResampleTrace)> {
    let config = OcclusionConfig {
        method: Method::OlmS,
        ..config.clone()
    };
    single_position(model, Some(lm), input, position, class, &config)
}

/// Relevance vectors for several classes computed from one shared set of traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionExplanation {
    pub vectors: Vec<RelevanceVector>,
    pub original: Vec<f64>,
    pub traces: Vec<ResampleTrace>,
}

impl OcclusionExplanation {
    pub fn for_class(&self, class: usize) -> Option<&RelevanceVector> {
        self.vectors.iter().find(|v| v.class_index == class)
    }
}

/// Explains `class` at every unit of `input`.
pub fn explain_input(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    class: usize,
    config: &OcclusionConfig,
) -> Result<OcclusionExplanation> {
    explain_classes(model, lm, input, &[class], config, &PredictionCache::new())
}

/// Explains each of `classes`, reusing one trace per position across classes.
pub fn explain_classes(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    classes: &[usize],
    config: &OcclusionConfig,
    cache: &PredictionCache,
) -> Result<OcclusionExplanation> {
    config.validate()?;
    for &c in classes {
        model.info().check_class(c)?;
    }
    let original = original_output(model, input, cache)?;
    let traces = (0..input.len())
        .into_par_iter()
        .map(|position| {
            position_trace(model, lm, input, position, config, cache).map_err(|e| Error::at(position, e))
        })
        .collect::<Result<Vec<_>>>()?;
    explanation_from_traces(model, input, classes, config, original, traces)
}

/// Assembles relevance vectors from precomputed traces.
pub fn explanation_from_traces(
    model: &dyn Classifier,
    input: &TokenizedInput,
    classes: &[usize],
    config: &OcclusionConfig,
    original: Vec<f64>,
    traces: Vec<ResampleTrace>,
) -> Result<OcclusionExplanation> {
    if traces.len() != input.len() {
        return Err(Error::ShapeError(format!(
            "{} traces for {} units",
            traces.len(),
            input.len()
        )));
    }
    let uses_lm = config.method.uses_language_model();
    let vectors = classes
        .iter()
        .map(|&class| {
            let values = traces
                .iter()
                .map(|t| match config.method {
                    Method::OlmS => t.sensitivity(class),
                    _ => t.relevance(original[class], class),
                })
                .collect();
            let meta = RelevanceMeta {
                original_prediction: original[class],
                normalized: model.is_normalized(),
                budget: uses_lm.then_some(config.budget),
                mode: uses_lm.then_some(config.mode),
                seed: uses_lm.then_some(config.seed),
                unk_token: (config.method == Method::Unk).then(|| config.unk_token.clone()),
                ig_steps: None,
            };
            RelevanceVector::new(input.id.clone(), config.method, class, values, meta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OcclusionExplanation {
        vectors,
        original,
        traces,
    })
}
