//! One entry point for every explanation method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{explain_gradient, GradientConfig, DEFAULT_IG_STEPS};
use crate::model::{Classifier, MaskedLm};
use crate::occlusion::{explain_classes, OcclusionConfig, PredictionCache, DEFAULT_BUDGET, DEFAULT_UNK_TOKEN};
use crate::types::{FillMode, Method, RelevanceVector, TokenizedInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub budget: usize,
    pub mode: FillMode,
    pub seed: u64,
    pub unk_token: String,
    pub ig_steps: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            budget: DEFAULT_BUDGET,
            mode: FillMode::Sample,
            seed: 0,
            unk_token: DEFAULT_UNK_TOKEN.to_string(),
            ig_steps: DEFAULT_IG_STEPS,
        }
    }
}

impl ExplainSettings {
    pub fn occlusion(&self, method: Method) -> OcclusionConfig {
        OcclusionConfig {
            method,
            unk_token: self.unk_token.clone(),
            budget: self.budget,
            mode: self.mode,
            seed: self.seed,
        }
    }

    pub fn gradient(&self, method: Method) -> GradientConfig {
        GradientConfig::new(method).with_steps(self.ig_steps)
    }
}

/// Relevance of every unit of `input` for `class` under `method`.
pub fn explain(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    method: Method,
    class: usize,
    settings: &ExplainSettings,
    cache: &PredictionCache,
) -> Result<RelevanceVector> {
    explain_all_classes(model, lm, input, method, &[class], settings, cache)?
        .pop()
        .ok_or_else(|| Error::ShapeError("no class requested".into()))
}

/// One vector per requested class. Occlusion methods share traces across classes.
pub fn explain_all_classes(
    model: &dyn Classifier,
    lm: Option<&dyn MaskedLm>,
    input: &TokenizedInput,
    method: Method,
    classes: &[usize],
    settings: &ExplainSettings,
    cache: &PredictionCache,
) -> Result<Vec<RelevanceVector>> {
    if method.is_gradient() {
        let config = settings.gradient(method);
        classes
            .iter()
            .map(|&c| explain_gradient(model, input, c, &config))
            .collect()
    } else {
        Ok(explain_classes(model, lm, input, classes, &settings.occlusion(method), cache)?.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::fixture::{sentiment_lm, sentiment_mlp};
    use crate::tokenize::tokenize;

    #[test]
    fn every_method_yields_one_value_per_unit() {
        let model = sentiment_mlp();
        let lm = sentiment_lm();
        let input = tokenize("good film , but very glum .").unwrap();
        let cache = PredictionCache::new();
        let settings = ExplainSettings {
            budget: 20,
            ..Default::default()
        };
        for method in Method::ALL {
            let r = explain(&model, Some(&lm), &input, method, 1, &settings, &cache).unwrap();
            assert_eq!(r.values.len(), 7, "{method}");
            assert_eq!(r.method, method);
        }
    }

    #[test]
    fn olm_without_language_model_is_a_config_error() {
        let model = sentiment_mlp();
        let r = explain(
            &model,
            None,
            &tokenize("good film").unwrap(),
            Method::Olm,
            0,
            &ExplainSettings::default(),
            &PredictionCache::new(),
        );
        assert!(r.is_err());
    }
}
