//! Explains every dataset record under every requested method.

use std::sync::Arc;

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use serde::Serialize;

use olm_core::explain::{explain, ExplainSettings};
use olm_core::occlusion::{explain_classes, PredictionCache, ResampleTrace};
use olm_core::{classify, Classifier, MaskedLm, Method, PredictionDistribution, RelevanceVector};

use crate::config::{ClassPolicy, RunConfig};
use crate::dataset::{self, Record};
use crate::models;

pub struct Models {
    pub classifier: Arc<dyn Classifier>,
    pub lm: Option<Arc<dyn MaskedLm>>,
}

impl Models {
    /// Loads the classifier, and the language model only when a method needs it.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let classifier = models::classifier(&config.model, config.workers)?;
        let lm = if config.methods.iter().any(|m| m.uses_language_model()) {
            Some(models::language_model(&config.lm, config.workers)?)
        } else {
            None
        };
        Ok(Models { classifier, lm })
    }
}

/// A record with its prediction and one relevance vector per method.
pub struct Explained {
    pub record: Record,
    pub prediction: PredictionDistribution,
    pub vectors: Vec<RelevanceVector>,
    /// Occlusion traces for methods that resample, in method order.
    pub traces: Vec<(Method, Vec<ResampleTrace>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub id: String,
    pub error: String,
}

pub struct Batch {
    pub explained: Vec<Explained>,
    pub errors: Vec<RecordError>,
}

pub fn load_records(config: &RunConfig, classifier: &dyn Classifier) -> Result<Vec<Record>> {
    let records = dataset::load(config.dataset_path()?, config.format, &config.separator)?;
    let classes = classifier.info().class_count;
    for r in &records {
        if let Some(label) = r.label {
            if label >= classes {
                bail!("record {}: label {label} outside the model's {classes} classes", r.id());
            }
        }
    }
    if let ClassPolicy::Index(c) = config.class_policy {
        classifier.info().check_class(c)?;
    }
    Ok(records)
}

fn explain_record(record: &Record, models: &Models, config: &RunConfig, settings: &ExplainSettings, cache: &PredictionCache) -> Result<Explained> {
    let model = models.classifier.as_ref();
    let lm = models.lm.as_deref();
    let prediction = classify(model, &record.input)?;
    let class = match config.class_policy {
        ClassPolicy::Gold => record.label.ok_or_else(|| anyhow!("record has no gold label"))?,
        ClassPolicy::Predicted => prediction.argmax().0,
        ClassPolicy::Index(c) => c,
    };
    let mut vectors = Vec::with_capacity(config.methods.len());
    let mut traces = Vec::new();
    for &method in &config.methods {
        let mut v = if method.is_gradient() {
            explain(model, lm, &record.input, method, class, settings, cache)?
        } else {
            let mut e = explain_classes(model, lm, &record.input, &[class], &settings.occlusion(method), cache)?;
            traces.push((method, std::mem::take(&mut e.traces)));
            e.vectors.remove(0)
        };
        v.excluded = record.excluded();
        vectors.push(v);
    }
    Ok(Explained {
        record: record.clone(),
        prediction,
        vectors,
        traces,
    })
}

/// Explains records on a pool of `config.workers` threads. Results keep
/// dataset order whatever the completion order.
pub fn explain_records(records: &[Record], models: &Models, config: &RunConfig) -> Result<Batch> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    let settings = config.settings();
    let cache = PredictionCache::new();
    let results: Vec<Result<Explained>> =
        pool.install(|| records.par_iter().map(|r| explain_record(r, models, config, &settings, &cache)).collect());
    let mut batch = Batch {
        explained: Vec::new(),
        errors: Vec::new(),
    };
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok(e) => batch.explained.push(e),
            Err(e) => batch.errors.push(RecordError {
                id: record.id().to_string(),
                error: format!("{e:#}"),
            }),
        }
    }
    if batch.explained.is_empty() {
        let first = batch.errors.first().map(|e| format!("{}: {}", e.id, e.error)).unwrap_or_default();
        bail!("every record failed; first failure {first}");
    }
    Ok(batch)
}
