use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Classifier, ClassifierInfo, Differentiable};

/// Pointwise linear combination `f = Σ α_j g^j` of classifiers.
///
/// Outputs are not re-normalized, so the result is only a probability
/// distribution when the coefficients are non-negative and sum to one.
pub struct LinearCombination {
    info: ClassifierInfo,
    members: Vec<(f64, Arc<dyn Classifier>)>,
}

/// Builds a [`LinearCombination`]; every member must share the class count.
pub fn linear_combination_classifier(members: Vec<(f64, Arc<dyn Classifier>)>) -> Result<LinearCombination> {
    let first = members
        .first()
        .ok_or_else(|| Error::ConfigError("linear combination needs at least one model".into()))?;
    let class_count = first.1.info().class_count;
    if let Some((_, m)) = members.iter().find(|(_, m)| m.info().class_count != class_count) {
        return Err(Error::ConfigError(format!(
            "model {} has {} classes, expected {class_count}",
            m.info().name,
            m.info().class_count
        )));
    }
    if let Some((a, _)) = members.iter().find(|(a, _)| !a.is_finite()) {
        return Err(Error::ConfigError(format!("non-finite coefficient {a}")));
    }
    let name = members
        .iter()
        .map(|(a, m)| format!("{a}*{}", m.info().name))
        .collect::<Vec<_>>()
        .join(" + ");
    Ok(LinearCombination {
        info: ClassifierInfo::new(name, class_count)?,
        members,
    })
}

impl LinearCombination {
    pub fn members(&self) -> &[(f64, Arc<dyn Classifier>)] {
        &self.members
    }

    fn differentiable_members(&self) -> Result<Vec<(f64, &dyn Differentiable)>> {
        self.members
            .iter()
            .map(|(a, m)| {
                m.as_differentiable().map(|d| (*a, d)).ok_or_else(|| {
                    Error::CapabilityError(format!("model {} has no gradients", m.info().name))
                })
            })
            .collect()
    }
}

impl Classifier for LinearCombination {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, units: &[String]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.info.class_count];
        for (a, m) in &self.members {
            for (o, v) in out.iter_mut().zip(m.predict(units)?) {
                *o += a * v;
            }
        }
        Ok(out)
    }

    fn is_normalized(&self) -> bool {
        false
    }

    fn as_differentiable(&self) -> Option<&dyn Differentiable> {
        if self.members.iter().all(|(_, m)| m.as_differentiable().is_some()) {
            Some(self)
        } else {
            None
        }
    }
}

/// Gradients of a combination are only meaningful when every member embeds
/// units identically; [`Differentiable::embed`] enforces this.
impl Differentiable for LinearCombination {
    fn embedding_dim(&self) -> usize {
        self.members[0]
            .1
            .as_differentiable()
            .map_or(0, |d| d.embedding_dim())
    }

    fn embed(&self, units: &[String]) -> Result<Vec<Vec<f64>>> {
        let members = self.differentiable_members()?;
        let reference = members[0].1.embed(units)?;
        for (_, m) in &members[1..] {
            if m.embed(units)? != reference {
                return Err(Error::CapabilityError(
                    "combined models do not share an embedding".into(),
                ));
            }
        }
        Ok(reference)
    }

    fn forward_embedded(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.info.class_count];
        for (a, m) in self.differentiable_members()? {
            for (o, v) in out.iter_mut().zip(m.forward_embedded(embeddings)?) {
                *o += a * v;
            }
        }
        Ok(out)
    }

    fn gradient_embedded(&self, embeddings: &[Vec<f64>], class: usize) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Vec<f64>> = embeddings.iter().map(|e| vec![0.0; e.len()]).collect();
        for (a, m) in self.differentiable_members()? {
            for (orow, grow) in out.iter_mut().zip(m.gradient_embedded(embeddings, class)?) {
                for (o, g) in orow.iter_mut().zip(grow) {
                    *o += a * g;
                }
            }
        }
        Ok(out)
    }
}

/// `f_c(x) = w_c · mean(e(x)) + b_c`, unnormalized. A closed-form fixture
/// for gradient methods.
#[derive(Debug, Clone)]
pub struct LinearEmbeddingClassifier {
    info: ClassifierInfo,
    embedding: HashMap<String, Vec<f64>>,
    dim: usize,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearEmbeddingClassifier {
    /// Units missing from `embedding` embed as the zero vector.
    pub fn new(
        name: impl Into<String>,
        embedding: HashMap<String, Vec<f64>>,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let info = ClassifierInfo::new(name, weights.len())?;
        let dim = weights[0].len();
        if weights.iter().any(|w| w.len() != dim) || bias.len() != weights.len() {
            return Err(Error::ConfigError("inconsistent linear model shapes".into()));
        }
        if embedding.values().any(|e| e.len() != dim) {
            return Err(Error::ConfigError("embedding width differs from weights".into()));
        }
        Ok(LinearEmbeddingClassifier {
            info,
            embedding,
            dim,
            weights,
            bias,
        })
    }
}

impl Classifier for LinearEmbeddingClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, units: &[String]) -> Result<Vec<f64>> {
        self.forward_embedded(&self.embed(units)?)
    }

    fn is_normalized(&self) -> bool {
        false
    }

    fn as_differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for LinearEmbeddingClassifier {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, units: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(units
            .iter()
            .map(|u| self.embedding.get(u).cloned().unwrap_or_else(|| vec![0.0; self.dim]))
            .collect())
    }

    fn forward_embedded(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        if embeddings.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = embeddings.len() as f64;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| {
                b + embeddings
                    .iter()
                    .map(|e| w.iter().zip(e).map(|(wi, ei)| wi * ei).sum::<f64>() / n)
                    .sum::<f64>()
            })
            .collect())
    }

    fn gradient_embedded(&self, embeddings: &[Vec<f64>], class: usize) -> Result<Vec<Vec<f64>>> {
        self.info.check_class(class)?;
        let n = embeddings.len() as f64;
        let row: Vec<f64> = self.weights[class].iter().map(|w| w / n).collect();
        Ok(vec![row; embeddings.len()])
    }
}
