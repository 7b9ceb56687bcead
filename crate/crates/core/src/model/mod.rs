//! Black-box contracts for classifiers and masked language models.
//!
//! The engine only ever sees unit sequences going in and probability
//! vectors or replacement candidates coming out. Gradients are an optional
//! extra capability exposed through [`Differentiable`] by in-process models.

pub mod backend;
pub mod protocol;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    DistributionKind, FillMode, PredictionDistribution, ReplacementDistribution, TokenizedInput,
    PROB_TOLERANCE,
};

pub use backend::{BackendEndpoint, Transport, WireClassifier, WireMaskedLm};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierInfo {
    pub name: String,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl ClassifierInfo {
    pub fn new(name: impl Into<String>, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::ConfigError(format!(
                "a classifier needs at least 2 classes, got {class_count}"
            )));
        }
        Ok(ClassifierInfo {
            name: name.into(),
            class_count,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::ConfigError(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::IndexError {
                position: class,
                len: self.class_count,
            });
        }
        Ok(())
    }
}

/// A model `f: X -> R^|C|` evaluated on sequences of unit surfaces.
pub trait Classifier: Send + Sync {
    fn info(&self) -> &ClassifierInfo;

    /// Raw per-class outputs for one unit sequence.
    fn predict(&self, units: &[String]) -> Result<Vec<f64>>;

    /// Evaluates several sequences; backends override this to pipeline requests.
    fn predict_batch(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|units| self.predict(units)).collect()
    }

    /// Whether outputs are probability distributions. Linear combinations of
    /// classifiers are the exception.
    fn is_normalized(&self) -> bool {
        true
    }

    fn as_differentiable(&self) -> Option<&dyn Differentiable> {
        None
    }
}

/// Gradient access for in-process models whose units are embedded as vectors.
pub trait Differentiable: Send + Sync {
    fn embedding_dim(&self) -> usize;

    /// One embedding row per unit.
    fn embed(&self, units: &[String]) -> Result<Vec<Vec<f64>>>;

    fn forward_embedded(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// d output[class] / d embeddings, same shape as `embeddings`.
    fn gradient_embedded(&self, embeddings: &[Vec<f64>], class: usize) -> Result<Vec<Vec<f64>>>;
}

/// Checks a raw output vector against the model's declared shape and,
/// for normalized models, the probability simplex.
pub(crate) fn check_output(model: &dyn Classifier, out: &[f64]) -> Result<()> {
    let expected = model.info().class_count;
    if out.len() != expected {
        return Err(Error::ProtocolViolation(format!(
            "model {} returned {} outputs, expected {expected}",
            model.info().name,
            out.len()
        )));
    }
    if let Some(v) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::ProtocolViolation(format!("non-finite output {v}")));
    }
    if model.is_normalized() {
        PredictionDistribution::new(out.to_vec())?;
    }
    Ok(())
}

/// Evaluates and validates one sequence.
pub fn evaluate(model: &dyn Classifier, units: &[String]) -> Result<Vec<f64>> {
    let out = model.predict(units)?;
    check_output(model, &out)?;
    Ok(out)
}

/// Evaluates and validates many sequences.
pub fn evaluate_batch(model: &dyn Classifier, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let outs = model.predict_batch(batch)?;
    if outs.len() != batch.len() {
        return Err(Error::ProtocolViolation(format!(
            "{} predictions for {} requests",
            outs.len(),
            batch.len()
        )));
    }
    for out in &outs {
        check_output(model, out)?;
    }
    Ok(outs)
}

/// Class distribution predicted for `input`.
pub fn classify(model: &dyn Classifier, input: &TokenizedInput) -> Result<PredictionDistribution> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let out = model.predict(&input.surfaces())?;
    if out.len() != model.info().class_count {
        return Err(Error::ProtocolViolation(format!(
            "model {} returned {} outputs, expected {}",
            model.info().name,
            out.len(),
            model.info().class_count
        )));
    }
    PredictionDistribution::new(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmInfo {
    pub name: String,
    /// Whether the model can enumerate its full conditional distribution.
    pub supports_exact: bool,
    pub max_candidates: usize,
}

impl LmInfo {
    pub fn new(name: impl Into<String>, supports_exact: bool, max_candidates: usize) -> Result<Self> {
        if max_candidates == 0 {
            return Err(Error::ConfigError("max_candidates must be at least 1".into()));
        }
        Ok(LmInfo {
            name: name.into(),
            supports_exact,
            max_candidates,
        })
    }
}

/// A masked language model proposing whole-unit replacements.
pub trait MaskedLm: Send + Sync {
    fn info(&self) -> &LmInfo;

    fn fill_mask_units(
        &self,
        units: &[String],
        position: usize,
        budget: usize,
        mode: FillMode,
        seed: u64,
    ) -> Result<ReplacementDistribution>;
}

/// Replacement distribution for `input.units[position]`, validated.
pub fn fill_mask(
    lm: &dyn MaskedLm,
    input: &TokenizedInput,
    position: usize,
    budget: usize,
    mode: FillMode,
    seed: u64,
) -> Result<ReplacementDistribution> {
    fill_mask_surfaces(lm, &input.surfaces(), position, budget, mode, seed)
}

pub(crate) fn fill_mask_surfaces(
    lm: &dyn MaskedLm,
    units: &[String],
    position: usize,
    budget: usize,
    mode: FillMode,
    seed: u64,
) -> Result<ReplacementDistribution> {
    if position >= units.len() {
        return Err(Error::IndexError {
            position,
            len: units.len(),
        });
    }
    if budget == 0 {
        return Err(Error::ConfigError("budget must be at least 1".into()));
    }
    if mode == FillMode::Exact && !lm.info().supports_exact {
        return Err(Error::CapabilityError(format!(
            "language model {} cannot enumerate exact distributions",
            lm.info().name
        )));
    }
    let dist = lm.fill_mask_units(units, position, budget, mode, seed)?;
    let expected_kind = match mode {
        FillMode::Sample => DistributionKind::EmpiricalCounts,
        FillMode::Exact => DistributionKind::ExactProbabilities,
    };
    if dist.kind != expected_kind {
        return Err(Error::ProtocolViolation(format!(
            "requested {mode:?} but received {:?}",
            dist.kind
        )));
    }
    if dist.position != position {
        return Err(Error::ProtocolViolation(format!(
            "distribution for position {} returned for request at {position}",
            dist.position
        )));
    }
    dist.validate(match mode {
        FillMode::Sample => Some(budget),
        FillMode::Exact => None,
    })?;
    Ok(dist)
}

/// Sum-to-one check reused by backends on raw probability vectors.
pub(crate) fn is_normalized(values: &[f64]) -> bool {
    (values.iter().sum::<f64>() - 1.0).abs() <= PROB_TOLERANCE
}

/// Classifier with a fixed output, useful as a degenerate baseline.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    info: ClassifierInfo,
    output: Vec<f64>,
}

impl ConstantClassifier {
    pub fn new(output: Vec<f64>) -> Result<Self> {
        let info = ClassifierInfo::new("constant", output.len())?;
        PredictionDistribution::new(output.clone())?;
        Ok(ConstantClassifier { info, output })
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        Self::new(vec![1.0 / class_count as f64; class_count])
    }
}

impl Classifier for ConstantClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, _units: &[String]) -> Result<Vec<f64>> {
        Ok(self.output.clone())
    }

    fn as_differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for ConstantClassifier {
    fn embedding_dim(&self) -> usize {
        1
    }

    fn embed(&self, units: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![1.0]; units.len()])
    }

    fn forward_embedded(&self, _embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.output.clone())
    }

    fn gradient_embedded(&self, embeddings: &[Vec<f64>], _class: usize) -> Result<Vec<Vec<f64>>> {
        Ok(embeddings.iter().map(|e| vec![0.0; e.len()]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::tokenize;

    #[test]
    fn constant_classifier_is_uniform() {
        let model = ConstantClassifier::uniform(3).unwrap();
        let p = classify(&model, &tokenize("anything at all").unwrap()).unwrap();
        for v in p.probs() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    struct Broken;
    impl Classifier for Broken {
        fn info(&self) -> &ClassifierInfo {
            static INFO: std::sync::OnceLock<ClassifierInfo> = std::sync::OnceLock::new();
            INFO.get_or_init(|| ClassifierInfo::new("broken", 2).unwrap())
        }
        fn predict(&self, _units: &[String]) -> Result<Vec<f64>> {
            Ok(vec![0.7, 0.7])
        }
    }

    #[test]
    fn unnormalized_output_is_a_protocol_violation() {
        let err = classify(&Broken, &tokenize("x").unwrap()).unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)));
        assert!(evaluate(&Broken, &["x".to_string()]).is_err());
    }

    #[test]
    fn class_info_validation() {
        assert!(ClassifierInfo::new("m", 1).is_err());
        let info = ClassifierInfo::new("m", 2).unwrap();
        assert!(info.clone().with_class_names(vec!["neg".into()]).is_err());
        assert!(info.check_class(2).is_err());
        assert!(LmInfo::new("lm", false, 0).is_err());
    }
}
