//! Resolves --model and --lm specs to in-process or remote models.

use std::sync::Arc;

use anyhow::{bail, Context, Result};

use olm_core::model::backend::{BackendEndpoint, WireClassifier, WireMaskedLm};
use olm_core::toy::fixture::{sentiment_bow, sentiment_lm, sentiment_mlp, three_class_mlp, ToyModel};
use olm_core::{Classifier, LmInfo, MaskedLm};

/// Candidate cap reported for remote language models.
const REMOTE_MAX_CANDIDATES: usize = 10_000;

fn is_remote(spec: &str) -> bool {
    spec.starts_with("stdio:") || spec.starts_with("http://") || spec.starts_with("https://")
}

pub fn classifier(spec: &str, workers: usize) -> Result<Arc<dyn Classifier>> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        return Ok(match name {
            "sentiment-bow" => Arc::new(sentiment_bow()),
            "sentiment-mlp" => Arc::new(sentiment_mlp()),
            "three-class-mlp" => Arc::new(three_class_mlp()),
            _ => bail!("unknown bundled classifier {name:?} (sentiment-bow, sentiment-mlp, three-class-mlp)"),
        });
    }
    if is_remote(spec) {
        let transport = BackendEndpoint::parse(spec)?.connect(workers)?;
        let model = WireClassifier::probe(spec, transport, &[".".to_string()])
            .with_context(|| format!("probing classifier backend {spec}"))?;
        return Ok(Arc::new(model));
    }
    Ok(ToyModel::load(spec).with_context(|| format!("loading classifier {spec}"))?.into_classifier()?)
}

pub fn language_model(spec: &str, workers: usize) -> Result<Arc<dyn MaskedLm>> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        return match name {
            "sentiment-lm" => Ok(Arc::new(sentiment_lm())),
            _ => bail!("unknown bundled language model {name:?} (sentiment-lm)"),
        };
    }
    if is_remote(spec) {
        let transport = BackendEndpoint::parse(spec)?.connect(workers)?;
        // The backend rejects exact requests it cannot enumerate.
        let info = LmInfo::new(spec, true, REMOTE_MAX_CANDIDATES)?;
        return Ok(Arc::new(WireMaskedLm::new(info, transport)));
    }
    Ok(ToyModel::load(spec).with_context(|| format!("loading language model {spec}"))?.into_lm()?)
}
