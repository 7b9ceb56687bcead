use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Classifier, ClassifierInfo};

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over summed per-token weight columns. Out-of-vocabulary units
/// contribute nothing.
#[derive(Debug, Clone)]
pub struct BowSoftmaxClassifier {
    info: ClassifierInfo,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    /// class_count × vocabulary
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl BowSoftmaxClassifier {
    pub fn new(
        name: impl Into<String>,
        vocabulary: Vec<String>,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let info = ClassifierInfo::new(name, bias.len())?;
        if weights.len() != bias.len() {
            return Err(Error::ConfigError(format!(
                "{} weight rows for {} classes",
                weights.len(),
                bias.len()
            )));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != vocabulary.len()) {
            return Err(Error::ConfigError(format!(
                "weight row of length {} for vocabulary of {}",
                row.len(),
                vocabulary.len()
            )));
        }
        if weights.iter().flatten().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::ConfigError("non-finite parameter".into()));
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, t) in vocabulary.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::ConfigError(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(BowSoftmaxClassifier {
            info,
            vocabulary,
            index,
            weights,
            bias,
        })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, units: &[String]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for u in units {
            if let Some(&j) = self.index.get(u) {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += self.weights[c][j];
                }
            }
        }
        z
    }
}

impl Classifier for BowSoftmaxClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, units: &[String]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(units)))
    }
}
