//! JSON fixture format for toy models and the bundled sentiment fixtures.
//!
//! ```json
//! {"type": "embedding_mlp", "vocabulary": ["<unk>", "a", ...], "params": {...}, "seed": 7}
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BowSoftmaxClassifier, CountMaskedLm, Dense, EmbeddingMlpClassifier};
use crate::error::{Error, Result};
use crate::model::{Classifier, MaskedLm};
use crate::tokenize::tokenize_with_id;
use crate::types::TokenizedInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    #[serde(rename = "type")]
    pub kind: String,
    pub vocabulary: Vec<String>,
    pub params: Value,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum ToyModel {
    CountLm(CountMaskedLm),
    Bow(BowSoftmaxClassifier),
    Mlp(EmbeddingMlpClassifier),
}

#[derive(Deserialize)]
struct LmParams {
    alpha: f64,
    bigrams: Vec<(String, String, u64)>,
}

#[derive(Deserialize)]
struct BowParams {
    name: String,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Deserialize)]
struct MlpParams {
    name: String,
    embedding: Vec<Vec<f64>>,
    layers: Vec<Dense>,
}

impl ToyModel {
    pub fn from_fixture(file: &FixtureFile) -> Result<Self> {
        let params = file.params.clone();
        let vocab = file.vocabulary.clone();
        Ok(match file.kind.as_str() {
            "count_lm" => {
                let p: LmParams = serde_json::from_value(params)?;
                let bigrams = p.bigrams.into_iter().map(|(l, r, c)| ((l, r), c)).collect();
                ToyModel::CountLm(CountMaskedLm::new(vocab, bigrams, p.alpha)?)
            }
            "bow_softmax" => {
                let p: BowParams = serde_json::from_value(params)?;
                ToyModel::Bow(BowSoftmaxClassifier::new(p.name, vocab, p.weights, p.bias)?)
            }
            "embedding_mlp" => {
                let p: MlpParams = serde_json::from_value(params)?;
                ToyModel::Mlp(EmbeddingMlpClassifier::new(p.name, vocab, p.embedding, p.layers)?)
            }
            other => return Err(Error::ConfigError(format!("unknown fixture type {other:?}"))),
        })
    }

    pub fn to_fixture(&self, seed: u64) -> FixtureFile {
        match self {
            ToyModel::CountLm(lm) => FixtureFile {
                kind: "count_lm".into(),
                vocabulary: lm.vocabulary().to_vec(),
                params: json!({
                    "alpha": lm.alpha(),
                    "bigrams": lm.bigram_table().into_iter().map(|((l, r), c)| (l, r, c)).collect::<Vec<_>>(),
                }),
                seed,
            },
            ToyModel::Bow(m) => FixtureFile {
                kind: "bow_softmax".into(),
                vocabulary: m.vocabulary().to_vec(),
                params: json!({ "name": m.info().name, "weights": m.weights(), "bias": m.bias() }),
                seed,
            },
            ToyModel::Mlp(m) => FixtureFile {
                kind: "embedding_mlp".into(),
                vocabulary: m.vocabulary().to_vec(),
                params: json!({ "name": m.info().name, "embedding": m.embedding(), "layers": m.layers() }),
                seed,
            },
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_fixture(&serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_fixture(seed))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn into_classifier(self) -> Result<Arc<dyn Classifier>> {
        match self {
            ToyModel::Bow(m) => Ok(Arc::new(m)),
            ToyModel::Mlp(m) => Ok(Arc::new(m)),
            ToyModel::CountLm(_) => Err(Error::ConfigError("fixture is a language model, not a classifier".into())),
        }
    }

    pub fn into_lm(self) -> Result<Arc<dyn MaskedLm>> {
        match self {
            ToyModel::CountLm(lm) => Ok(Arc::new(lm)),
            _ => Err(Error::ConfigError("fixture is a classifier, not a language model".into())),
        }
    }
}

const SENTIMENT_CORPUS: &str = include_str!("../../fixtures/sentiment_corpus.txt");
const SENTIMENT_TSV: &str = include_str!("../../fixtures/sentiment.tsv");

/// Seed used for every bundled fixture.
pub const FIXTURE_SEED: u64 = 7;

/// Negative = 0, positive = 1.
pub const SENTIMENT_CLASSES: [&str; 2] = ["negative", "positive"];

pub fn sentiment_corpus() -> Vec<&'static str> {
    SENTIMENT_CORPUS.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// The bundled 20-sentence labelled sentiment dataset.
pub fn sentiment_dataset() -> Vec<TokenizedInput> {
    SENTIMENT_TSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let label = cols[2].trim().parse().expect("bundled labels are integers");
            tokenize_with_id(cols[0], cols[1])
                .expect("bundled sentences are non-empty")
                .with_gold_label(label)
        })
        .collect()
}

pub fn sentiment_lm() -> CountMaskedLm {
    CountMaskedLm::from_corpus(&sentiment_corpus(), 0.5).expect("bundled corpus is valid")
}

/// Hand-set per-word positive-class weights.
const BOW_POLARITY: &[(&str, f64)] = &[
    ("good", 4.0),
    ("great", 3.5),
    ("nice", 3.0),
    ("lovely", 3.0),
    ("fun", 2.5),
    ("fine", 1.0),
    ("film", 0.3),
    ("very", 0.1),
    ("but", -0.3),
    ("glum", -1.2),
    ("slow", -1.5),
    ("long", -1.0),
    ("not", -2.0),
    ("dull", -3.0),
    ("boring", -3.5),
    ("bad", -4.0),
    ("awful", -4.5),
];

/// Bias chosen so that "good film , but very glum ." is positive with probability 0.98.
pub fn sentiment_bow() -> BowSoftmaxClassifier {
    let mut vocab: Vec<String> = sentiment_lm().vocabulary().to_vec();
    for (w, _) in BOW_POLARITY {
        if !vocab.iter().any(|v| v == w) {
            vocab.push(w.to_string());
        }
    }
    let weight: HashMap<&str, f64> = BOW_POLARITY.iter().copied().collect();
    let positive: Vec<f64> = vocab
        .iter()
        .map(|t| weight.get(t.as_str()).copied().unwrap_or(0.0))
        .collect();
    let sentence_score: f64 = ["good", "film", ",", "but", "very", "glum", "."]
        .iter()
        .map(|t| weight.get(t).copied().unwrap_or(0.0))
        .sum();
    let bias = (0.98_f64 / 0.02).ln() - sentence_score;
    BowSoftmaxClassifier::new(
        "sentiment-bow",
        vocab.clone(),
        vec![vec![0.0; vocab.len()], positive],
        vec![0.0, bias],
    )
    .expect("bundled weights are valid")
}

/// Embedding MLP fitted to the bundled dataset.
pub fn sentiment_mlp() -> EmbeddingMlpClassifier {
    let vocab = sentiment_lm().vocabulary().to_vec();
    let mut model = EmbeddingMlpClassifier::random("sentiment-mlp", &vocab, 4, &[6], 2, FIXTURE_SEED)
        .expect("valid shapes");
    let examples: Vec<(Vec<String>, usize)> = sentiment_dataset()
        .into_iter()
        .map(|x| (x.surfaces(), x.gold_label.unwrap()))
        .collect();
    model.fit(&examples, 400, 1.0).expect("bundled dataset is non-empty");
    model
}

/// Untrained three-class MLP with two hidden layers.
pub fn three_class_mlp() -> EmbeddingMlpClassifier {
    let vocab = sentiment_lm().vocabulary().to_vec();
    EmbeddingMlpClassifier::random("three-class-mlp", &vocab, 3, &[5, 4], 3, FIXTURE_SEED + 4)
        .expect("valid shapes")
}

/// Same function as `model`: each word column is shifted by the same amount
/// in every class, which softmax cancels.
pub fn shifted_bow(model: &BowSoftmaxClassifier) -> BowSoftmaxClassifier {
    let weights = model
        .weights()
        .iter()
        .map(|row| row.iter().enumerate().map(|(v, w)| w + 0.25 * (v % 4) as f64).collect())
        .collect();
    BowSoftmaxClassifier::new(
        format!("{}-shifted", model.info().name),
        model.vocabulary().to_vec(),
        weights,
        model.bias().to_vec(),
    )
    .expect("shapes are unchanged")
}

/// Same function as `model` with the first hidden layer's units reversed.
pub fn permuted_mlp(model: &EmbeddingMlpClassifier) -> EmbeddingMlpClassifier {
    let width = model.layers()[0].outputs();
    let perm: Vec<usize> = (0..width).rev().collect();
    model.permute_hidden(0, &perm).expect("valid permutation")
}

/// A classifier, a language model, and the inputs to explain, along with a
/// functionally identical reparameterization (`twin`) and a different model
/// over the same classes and embedding (`partner`).
#[derive(Clone)]
pub struct BundledFixture {
    pub name: String,
    pub classifier: Arc<dyn Classifier>,
    pub twin: Arc<dyn Classifier>,
    pub partner: Arc<dyn Classifier>,
    pub lm: Arc<CountMaskedLm>,
    pub inputs: Vec<TokenizedInput>,
}

pub fn bundled_fixtures() -> Vec<BundledFixture> {
    let lm = Arc::new(sentiment_lm());
    let inputs = sentiment_dataset();
    let bow = sentiment_bow();
    let half_bow = BowSoftmaxClassifier::new(
        "sentiment-bow-half",
        bow.vocabulary().to_vec(),
        bow.weights().iter().map(|r| r.iter().map(|w| 0.5 * w).collect()).collect(),
        bow.bias().to_vec(),
    )
    .expect("valid shapes");
    let mlp = sentiment_mlp();
    let three = three_class_mlp();
    let triples: Vec<[Arc<dyn Classifier>; 3]> = vec![
        [Arc::new(shifted_bow(&bow)), Arc::new(half_bow), Arc::new(bow)],
        [
            Arc::new(permuted_mlp(&mlp)),
            Arc::new(mlp.scale_output_row(0, 1.5).expect("valid class").with_name("sentiment-mlp-scaled")),
            Arc::new(mlp),
        ],
        [
            Arc::new(permuted_mlp(&three)),
            Arc::new(three.scale_output_row(2, 0.5).expect("valid class").with_name("three-class-mlp-scaled")),
            Arc::new(three),
        ],
    ];
    triples
        .into_iter()
        .map(|[twin, partner, classifier]| BundledFixture {
            name: classifier.info().name.clone(),
            classifier,
            twin,
            partner,
            lm: lm.clone(),
            inputs: inputs.clone(),
        })
        .collect()
}
