use std::collections::HashMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bow::softmax;
use crate::error::{Error, Result};
use crate::model::{Classifier, ClassifierInfo, Differentiable};
use crate::types::{PredictionDistribution, TokenizedInput};

/// Reserved vocabulary entry every out-of-vocabulary unit maps to.
pub const OOV_TOKEN: &str = "<unk>";

/// Fully connected layer, weights stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: vec![vec![0.0; inputs]; outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let u = Uniform::new(-0.5, 0.5);
        Dense {
            weights: (0..outputs)
                .map(|_| (0..inputs).map(|_| u.sample(rng)).collect())
                .collect(),
            bias: (0..outputs).map(|_| u.sample(rng)).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// W^T g
    fn transpose_apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs()];
        for (row, gi) in self.weights.iter().zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the pooled input, `activations[l + 1]` the output
    /// of layer `l` (tanh for hidden layers, softmax for the last).
    pub activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }

    pub fn hidden(&self) -> &[Vec<f64>] {
        let n = self.activations.len();
        &self.activations[1..n - 1]
    }
}

/// Mean-pooled word embeddings fed through tanh layers and a softmax output.
#[derive(Debug, Clone)]
pub struct EmbeddingMlpClassifier {
    info: ClassifierInfo,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    embedding: Vec<Vec<f64>>,
    layers: Vec<Dense>,
}

impl EmbeddingMlpClassifier {
    /// `vocabulary[0]` must be [`OOV_TOKEN`].
    pub fn new(
        name: impl Into<String>,
        vocabulary: Vec<String>,
        embedding: Vec<Vec<f64>>,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        if vocabulary.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::ConfigError(format!(
                "vocabulary must start with the reserved {OOV_TOKEN} entry"
            )));
        }
        if embedding.len() != vocabulary.len() {
            return Err(Error::ConfigError(format!(
                "{} embedding rows for {} vocabulary entries",
                embedding.len(),
                vocabulary.len()
            )));
        }
        let dim = embedding[0].len();
        if dim == 0 || embedding.iter().any(|r| r.len() != dim) {
            return Err(Error::ConfigError("ragged or empty embedding matrix".into()));
        }
        let last = layers
            .last()
            .ok_or_else(|| Error::ConfigError("MLP needs at least one layer".into()))?;
        let info = ClassifierInfo::new(name, last.outputs())?;
        let mut width = dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.outputs() || layer.weights.iter().any(|r| r.len() != width) {
                return Err(Error::ConfigError(format!("layer {l} expects input width {width}")));
            }
            width = layer.outputs();
        }
        let all_params = embedding
            .iter()
            .flatten()
            .chain(layers.iter().flat_map(|l| l.weights.iter().flatten().chain(&l.bias)));
        if all_params.clone().any(|v| !v.is_finite()) {
            return Err(Error::ConfigError("non-finite parameter".into()));
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, t) in vocabulary.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::ConfigError(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(EmbeddingMlpClassifier {
            info,
            vocabulary,
            index,
            embedding,
            layers,
        })
    }

    /// Parameters drawn from uniform(-0.5, 0.5) with a seeded generator.
    /// [`OOV_TOKEN`] is prepended to `vocabulary` when missing.
    pub fn random(
        name: impl Into<String>,
        vocabulary: &[String],
        dim: usize,
        hidden: &[usize],
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut vocab = vec![OOV_TOKEN.to_string()];
        vocab.extend(vocabulary.iter().filter(|t| *t != OOV_TOKEN).cloned());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-0.5, 0.5);
        let embedding = (0..vocab.len())
            .map(|_| (0..dim).map(|_| u.sample(&mut rng)).collect())
            .collect();
        let mut layers = Vec::new();
        let mut width = dim;
        for &h in hidden.iter().chain(std::iter::once(&class_count)) {
            layers.push(Dense::random(width, h, &mut rng));
            width = h;
        }
        Self::new(name, vocab, embedding, layers)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn embedding(&self) -> &[Vec<f64>] {
        &self.embedding
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn token_index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.info.name = name.into();
        self
    }

    pub fn forward_pooled(&self, pooled: &[f64]) -> ForwardPass {
        let mut activations = vec![pooled.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(activations.last().unwrap());
            activations.push(if l == last {
                softmax(&z)
            } else {
                z.into_iter().map(f64::tanh).collect()
            });
        }
        ForwardPass { activations }
    }

    fn pool(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        let first = embeddings.first().ok_or(Error::EmptyInput)?;
        let n = embeddings.len() as f64;
        let mut pooled = vec![0.0; first.len()];
        for e in embeddings {
            if e.len() != pooled.len() {
                return Err(Error::ShapeError("ragged embeddings".into()));
            }
            for (p, v) in pooled.iter_mut().zip(e) {
                *p += v / n;
            }
        }
        Ok(pooled)
    }

    /// Output distribution plus every hidden activation vector.
    pub fn forward(&self, input: &TokenizedInput) -> Result<(PredictionDistribution, Vec<Vec<f64>>)> {
        let emb = self.embed_units(&input.surfaces());
        let pass = self.forward_pooled(&Self::pool(&emb)?);
        let probs = PredictionDistribution::new(pass.output().to_vec())?;
        Ok((probs, pass.hidden().to_vec()))
    }

    /// Gradient of output `class` w.r.t. each unit's embedding row.
    pub fn input_gradient(&self, input: &TokenizedInput, class: usize) -> Result<Vec<Vec<f64>>> {
        self.info.check_class(class)?;
        self.gradient_embedded(&self.embed_units(&input.surfaces()), class)
    }

    fn embed_units(&self, units: &[String]) -> Vec<Vec<f64>> {
        units
            .iter()
            .map(|u| self.embedding[self.token_index(u)].clone())
            .collect()
    }

    /// Propagates `d loss / d logits` back to the pooled input, optionally
    /// collecting parameter gradients.
    fn backprop(&self, pass: &ForwardPass, grad_logits: Vec<f64>, params: Option<&mut [Dense]>) -> Vec<f64> {
        let mut g = grad_logits;
        let mut params = params;
        for l in (0..self.layers.len()).rev() {
            if let Some(grads) = params.as_deref_mut() {
                let input = &pass.activations[l];
                for (row, gi) in grads[l].weights.iter_mut().zip(&g) {
                    for (w, x) in row.iter_mut().zip(input) {
                        *w += gi * x;
                    }
                }
                for (b, gi) in grads[l].bias.iter_mut().zip(&g) {
                    *b += gi;
                }
            }
            let g_in = self.layers[l].transpose_apply(&g);
            g = if l > 0 {
                g_in.iter()
                    .zip(&pass.activations[l])
                    .map(|(gv, a)| gv * (1.0 - a * a))
                    .collect()
            } else {
                g_in
            };
        }
        g
    }

    /// Copy with the units of hidden layer `layer` reordered by `perm`;
    /// computes exactly the same function.
    pub fn permute_hidden(&self, layer: usize, perm: &[usize]) -> Result<Self> {
        if layer + 1 >= self.layers.len() {
            return Err(Error::ConfigError(format!("layer {layer} is not a hidden layer")));
        }
        let width = self.layers[layer].outputs();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..width).collect::<Vec<_>>() {
            return Err(Error::ConfigError("not a permutation of the hidden units".into()));
        }
        let mut layers = self.layers.clone();
        let src = &self.layers[layer];
        layers[layer] = Dense {
            weights: perm.iter().map(|&p| src.weights[p].clone()).collect(),
            bias: perm.iter().map(|&p| src.bias[p]).collect(),
        };
        let next = &self.layers[layer + 1];
        layers[layer + 1].weights = next
            .weights
            .iter()
            .map(|row| perm.iter().map(|&p| row[p]).collect())
            .collect();
        Self::new(
            format!("{}-permuted", self.info.name),
            self.vocabulary.clone(),
            self.embedding.clone(),
            layers,
        )
    }

    /// Copy whose output row for `class` (last layer) is scaled by `factor`.
    pub fn scale_output_row(&self, class: usize, factor: f64) -> Result<Self> {
        self.info.check_class(class)?;
        let mut layers = self.layers.clone();
        let last = layers.last_mut().unwrap();
        for w in &mut last.weights[class] {
            *w *= factor;
        }
        last.bias[class] *= factor;
        Self::new(self.info.name.clone(), self.vocabulary.clone(), self.embedding.clone(), layers)
    }

    /// Mean cross-entropy over `examples`.
    pub fn loss(&self, examples: &[(Vec<String>, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (units, label) in examples {
            let pass = self.forward_pooled(&Self::pool(&self.embed_units(units))?);
            total -= pass.output()[*label].max(1e-300).ln();
        }
        Ok(total / examples.len().max(1) as f64)
    }

    /// Full-batch gradient descent on mean cross-entropy, embeddings
    /// included. Returns the final loss.
    pub fn fit(&mut self, examples: &[(Vec<String>, usize)], epochs: usize, learning_rate: f64) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::InsufficientData("no training examples".into()));
        }
        for (_, label) in examples {
            self.info.check_class(*label)?;
        }
        let scale = 1.0 / examples.len() as f64;
        for _ in 0..epochs {
            let mut layer_grads: Vec<Dense> = self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect();
            let mut emb_grads: HashMap<usize, Vec<f64>> = HashMap::new();
            for (units, label) in examples {
                let rows: Vec<usize> = units.iter().map(|u| self.token_index(u)).collect();
                let pass = self.forward_pooled(&Self::pool(&self.embed_units(units))?);
                let mut g = pass.output().to_vec();
                g[*label] -= 1.0;
                let g_pooled = self.backprop(&pass, g, Some(&mut layer_grads));
                let n = rows.len() as f64;
                for r in rows {
                    let acc = emb_grads.entry(r).or_insert_with(|| vec![0.0; g_pooled.len()]);
                    for (a, gv) in acc.iter_mut().zip(&g_pooled) {
                        *a += gv / n;
                    }
                }
            }
            for (layer, grad) in self.layers.iter_mut().zip(&layer_grads) {
                for (row, grow) in layer.weights.iter_mut().zip(&grad.weights) {
                    for (w, gw) in row.iter_mut().zip(grow) {
                        *w -= learning_rate * scale * gw;
                    }
                }
                for (b, gb) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= learning_rate * scale * gb;
                }
            }
            for (r, grad) in emb_grads {
                for (e, gv) in self.embedding[r].iter_mut().zip(grad) {
                    *e -= learning_rate * scale * gv;
                }
            }
        }
        self.loss(examples)
    }
}

impl Classifier for EmbeddingMlpClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, units: &[String]) -> Result<Vec<f64>> {
        self.forward_embedded(&self.embed_units(units))
    }

    fn as_differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for EmbeddingMlpClassifier {
    fn embedding_dim(&self) -> usize {
        self.embedding[0].len()
    }

    fn embed(&self, units: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(self.embed_units(units))
    }

    fn forward_embedded(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward_pooled(&Self::pool(embeddings)?).output().to_vec())
    }

    fn gradient_embedded(&self, embeddings: &[Vec<f64>], class: usize) -> Result<Vec<Vec<f64>>> {
        self.info.check_class(class)?;
        let pass = self.forward_pooled(&Self::pool(embeddings)?);
        let p = pass.output();
        // d softmax_c / d z_k = p_c (δ_ck - p_k)
        let g_logits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, pk)| p[class] * (if k == class { 1.0 } else { 0.0 } - pk))
            .collect();
        let g_pooled = self.backprop(&pass, g_logits, None);
        let n = embeddings.len() as f64;
        let row: Vec<f64> = g_pooled.iter().map(|g| g / n).collect();
        Ok(vec![row; embeddings.len()])
    }
}
