//! Gradient baselines on in-process differentiable models, aggregated to one
//! value per unit by summing over embedding dimensions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, Differentiable};
use crate::types::{Method, RelevanceMeta, RelevanceVector, TokenizedInput};

pub const DEFAULT_IG_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgBaseline {
    ZeroEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub method: Method,
    pub ig_steps: usize,
    pub ig_baseline: IgBaseline,
}

impl GradientConfig {
    pub fn new(method: Method) -> Self {
        GradientConfig {
            method,
            ig_steps: DEFAULT_IG_STEPS,
            ig_baseline: IgBaseline::ZeroEmbedding,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.ig_steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.method.is_gradient() {
            return Err(Error::ConfigError(format!("{} is not a gradient method", self.method)));
        }
        if self.ig_steps == 0 {
            return Err(Error::ConfigError("ig_steps must be at least 1".into()));
        }
        Ok(())
    }
}

fn differentiable(model: &dyn Classifier) -> Result<&dyn Differentiable> {
    model.as_differentiable().ok_or_else(|| {
        Error::CapabilityError(format!(
            "model {} does not expose gradients; gradient methods need an in-process differentiable model",
            model.info().name
        ))
    })
}

struct Prepared<'a> {
    model: &'a dyn Differentiable,
    embeddings: Vec<Vec<f64>>,
    meta: RelevanceMeta,
}

fn prepare<'a>(model: &'a dyn Classifier, input: &TokenizedInput, class: usize) -> Result<Prepared<'a>> {
    let d = differentiable(model)?;
    model.info().check_class(class)?;
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let embeddings = d.embed(&input.surfaces())?;
    let original = d.forward_embedded(&embeddings)?[class];
    Ok(Prepared {
        model: d,
        embeddings,
        meta: RelevanceMeta {
            original_prediction: original,
            normalized: model.is_normalized(),
            ..Default::default()
        },
    })
}

/// Σ_d |∂f_c/∂e_{i,d}| per unit.
pub fn sensitivity_analysis(model: &dyn Classifier, input: &TokenizedInput, class: usize) -> Result<RelevanceVector> {
    let p = prepare(model, input, class)?;
    let grad = p.model.gradient_embedded(&p.embeddings, class)?;
    let values = grad.iter().map(|g| g.iter().map(|v| v.abs()).sum()).collect();
    RelevanceVector::new(input.id.clone(), Method::SensitivityAnalysis, class, values, p.meta)
}

/// Σ_d e_{i,d} · ∂f_c/∂e_{i,d} per unit.
pub fn gradient_times_input(model: &dyn Classifier, input: &TokenizedInput, class: usize) -> Result<RelevanceVector> {
    let p = prepare(model, input, class)?;
    let grad = p.model.gradient_embedded(&p.embeddings, class)?;
    let values = dot_rows(&p.embeddings, &grad);
    RelevanceVector::new(input.id.clone(), Method::GradientTimesInput, class, values, p.meta)
}

/// Integrated gradients from the zero embedding, midpoint rule with
/// `ig_steps` gradient evaluations at t = (k + 1/2) / steps.
pub fn integrated_gradients(
    model: &dyn Classifier,
    input: &TokenizedInput,
    class: usize,
    config: &GradientConfig,
) -> Result<RelevanceVector> {
    if config.ig_steps == 0 {
        return Err(Error::ConfigError("ig_steps must be at least 1".into()));
    }
    let mut p = prepare(model, input, class)?;
    let steps = config.ig_steps;
    let grads = (0..steps)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 + 0.5) / steps as f64;
            let scaled: Vec<Vec<f64>> = p
                .embeddings
                .iter()
                .map(|row| row.iter().map(|v| t * v).collect())
                .collect();
            p.model.gradient_embedded(&scaled, class)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean: Vec<Vec<f64>> = p.embeddings.iter().map(|r| vec![0.0; r.len()]).collect();
    for g in &grads {
        for (mrow, grow) in mean.iter_mut().zip(g) {
            for (m, v) in mrow.iter_mut().zip(grow) {
                *m += v / steps as f64;
            }
        }
    }
    let values = dot_rows(&p.embeddings, &mean);
    p.meta.ig_steps = Some(steps);
    RelevanceVector::new(input.id.clone(), Method::IntegratedGradients, class, values, p.meta)
}

/// f_c at the integrated-gradients baseline.
pub fn baseline_prediction(model: &dyn Classifier, input: &TokenizedInput, class: usize) -> Result<f64> {
    let d = differentiable(model)?;
    let zeros = vec![vec![0.0; d.embedding_dim()]; input.len()];
    Ok(d.forward_embedded(&zeros)?[class])
}

pub fn explain_gradient(
    model: &dyn Classifier,
    input: &TokenizedInput,
    class: usize,
    config: &GradientConfig,
) -> Result<RelevanceVector> {
    config.validate()?;
    match config.method {
        Method::SensitivityAnalysis => sensitivity_analysis(model, input, class),
        Method::GradientTimesInput => gradient_times_input(model, input, class),
        Method::IntegratedGradients => integrated_gradients(model, input, class, config),
        _ => unreachable!("validated above"),
    }
}

fn dot_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::model::ConstantClassifier;
    use crate::tokenize::tokenize;
    use crate::toy::{BowSoftmaxClassifier, LinearEmbeddingClassifier};

    fn linear() -> LinearEmbeddingClassifier {
        let emb: HashMap<String, Vec<f64>> = [
            ("a".to_string(), vec![1.0, -2.0]),
            ("b".to_string(), vec![0.5, 3.0]),
        ]
        .into_iter()
        .collect();
        LinearEmbeddingClassifier::new("lin", emb, vec![vec![0.3, 0.1], vec![-0.2, 0.4]], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_model_has_zero_sensitivity() {
        let model = ConstantClassifier::uniform(2).unwrap();
        let input = tokenize("a b c").unwrap();
        assert_eq!(sensitivity_analysis(&model, &input, 0).unwrap().values, vec![0.0; 3]);
        assert_eq!(gradient_times_input(&model, &input, 1).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn linear_single_unit_gradient_times_input_equals_output() {
        let model = linear();
        let input = tokenize("a").unwrap();
        let r = gradient_times_input(&model, &input, 0).unwrap();
        let f = model.predict(&input.surfaces()).unwrap()[0];
        assert!((r.values[0] - f).abs() < 1e-15);
    }

    #[test]
    fn integrated_gradients_equal_gradient_times_input_on_linear_models() {
        let model = linear();
        let input = tokenize("a b a").unwrap();
        let gi = gradient_times_input(&model, &input, 1).unwrap();
        for steps in [1, 3, 50] {
            let ig = integrated_gradients(&model, &input, 1, &GradientConfig::new(Method::IntegratedGradients).with_steps(steps))
                .unwrap();
            for (x, y) in gi.values.iter().zip(&ig.values) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_embedding_gives_zero_relevance() {
        let model = linear();
        // "zz" is not in the embedding table and embeds as zero
        let r = gradient_times_input(&model, &tokenize("a zz").unwrap(), 0).unwrap();
        assert_eq!(r.values[1], 0.0);
    }

    #[test]
    fn black_box_models_are_refused() {
        let bow = BowSoftmaxClassifier::new("bow", vec!["a".into()], vec![vec![0.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        let err = explain_gradient(&bow, &tokenize("a").unwrap(), 0, &GradientConfig::new(Method::GradientTimesInput))
            .unwrap_err();
        assert!(matches!(err, Error::CapabilityError(_)));
    }

    #[test]
    fn config_validation() {
        assert!(GradientConfig::new(Method::Olm).validate().is_err());
        assert!(GradientConfig::new(Method::IntegratedGradients).with_steps(0).validate().is_err());
    }
}
