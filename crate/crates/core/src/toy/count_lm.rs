use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LmInfo, MaskedLm};
use crate::tokenize::tokenize;
use crate::types::{Candidate, DistributionKind, FillMode, ReplacementDistribution};

/// Left sentinel for the first unit of an input.
pub const BOS: &str = "<s>";
/// Right sentinel for the last unit of an input.
pub const EOS: &str = "</s>";

/// Neighbor-conditioned masked LM over a fixed vocabulary.
///
/// `p(t | left, right) ∝ (count(left, t) + α) · (count(t, right) + α)`
#[derive(Debug, Clone)]
pub struct CountMaskedLm {
    info: LmInfo,
    vocabulary: Vec<String>,
    bigrams: HashMap<(String, String), u64>,
    alpha: f64,
}

impl CountMaskedLm {
    pub fn new(
        vocabulary: Vec<String>,
        bigrams: HashMap<(String, String), u64>,
        alpha: f64,
    ) -> Result<Self> {
        if vocabulary.is_empty() {
            return Err(Error::ConfigError("count LM vocabulary is empty".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::ConfigError(format!("smoothing alpha must be > 0, got {alpha}")));
        }
        let distinct: BTreeSet<&String> = vocabulary.iter().collect();
        if distinct.len() != vocabulary.len() {
            return Err(Error::ConfigError("count LM vocabulary has duplicates".into()));
        }
        if vocabulary.iter().any(|t| t == BOS || t == EOS) {
            return Err(Error::ConfigError("sentinels cannot be vocabulary entries".into()));
        }
        let info = LmInfo::new("count-lm", true, vocabulary.len())?;
        Ok(CountMaskedLm {
            info,
            vocabulary,
            bigrams,
            alpha,
        })
    }

    /// Counts bigrams over one sentence per entry; the vocabulary is every
    /// unit seen, sorted.
    pub fn from_corpus<S: AsRef<str>>(sentences: &[S], alpha: f64) -> Result<Self> {
        let mut vocab = BTreeSet::new();
        let mut bigrams: HashMap<(String, String), u64> = HashMap::new();
        for sentence in sentences {
            if sentence.as_ref().trim().is_empty() {
                continue;
            }
            let units = tokenize(sentence.as_ref())?.surfaces();
            let mut prev = BOS.to_string();
            for u in units.iter().chain(std::iter::once(&EOS.to_string())) {
                *bigrams.entry((prev.clone(), u.clone())).or_default() += 1;
                prev = u.clone();
            }
            vocab.extend(units);
        }
        Self::new(vocab.into_iter().collect(), bigrams, alpha)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, left: &str, right: &str) -> u64 {
        self.bigrams
            .get(&(left.to_string(), right.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Bigram counts in a stable order, for serialization.
    pub fn bigram_table(&self) -> BTreeMap<(String, String), u64> {
        self.bigrams.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    /// Exact conditional over the vocabulary, aligned with [`Self::vocabulary`].
    pub fn conditional(&self, units: &[String], position: usize) -> Result<Vec<f64>> {
        if position >= units.len() {
            return Err(Error::IndexError {
                position,
                len: units.len(),
            });
        }
        let left = if position == 0 { BOS } else { units[position - 1].as_str() };
        let right = units.get(position + 1).map_or(EOS, String::as_str);
        let scores: Vec<f64> = self
            .vocabulary
            .iter()
            .map(|t| {
                (self.count(left, t) as f64 + self.alpha) * (self.count(t, right) as f64 + self.alpha)
            })
            .collect();
        let total: f64 = scores.iter().sum();
        Ok(scores.into_iter().map(|s| s / total).collect())
    }
}

impl MaskedLm for CountMaskedLm {
    fn info(&self) -> &LmInfo {
        &self.info
    }

    fn fill_mask_units(
        &self,
        units: &[String],
        position: usize,
        budget: usize,
        mode: FillMode,
        seed: u64,
    ) -> Result<ReplacementDistribution> {
        let probs = self.conditional(units, position)?;
        match mode {
            FillMode::Exact => {
                let candidates = self
                    .vocabulary
                    .iter()
                    .zip(&probs)
                    .map(|(t, &p)| Candidate {
                        token: t.clone(),
                        weight: p,
                    })
                    .collect();
                ReplacementDistribution::new(position, candidates, DistributionKind::ExactProbabilities, None)
            }
            FillMode::Sample => {
                let sampler = WeightedIndex::new(&probs)
                    .map_err(|e| Error::ConfigError(format!("bad conditional: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut counts = vec![0u64; probs.len()];
                for _ in 0..budget {
                    counts[sampler.sample(&mut rng)] += 1;
                }
                let mut candidates: Vec<Candidate> = self
                    .vocabulary
                    .iter()
                    .zip(&counts)
                    .filter(|(_, &c)| c > 0)
                    .map(|(t, &c)| Candidate {
                        token: t.clone(),
                        weight: c as f64,
                    })
                    .collect();
                // most frequent first, ties by token
                candidates.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.token.cmp(&b.token)));
                ReplacementDistribution::new(
                    position,
                    candidates,
                    DistributionKind::EmpiricalCounts,
                    Some(budget),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fill_mask;
    use crate::tokenize::tokenize;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn neighbor_counts_favor_seen_bigrams() {
        let lm = CountMaskedLm::from_corpus(&["a b c", "a b d"], 0.5).unwrap();
        assert_eq!(lm.vocabulary(), ["a", "b", "c", "d"]);
        let p = lm.conditional(&s(&["a", "x", "c"]), 1).unwrap();
        // hand counts: b -> (2+α)(1+α) = 3.75, d -> α² = 0.25, a -> (0+α)(0+α), c -> α·α
        let total = 3.75 + 0.25 * 3.0;
        assert!((p[1] - 3.75 / total).abs() < 1e-15);
        assert!((p[3] - 0.25 / total).abs() < 1e-15);
        assert!(p[1] > p[3]);
    }

    #[test]
    fn boundary_uses_sentinels() {
        let lm = CountMaskedLm::from_corpus(&["a b c", "a b d"], 1.0).unwrap();
        let p = lm.conditional(&s(&["x", "b"]), 0).unwrap();
        // a: (count(<s>,a)=2 + 1)(count(a,b)=2 + 1) = 9; others: 1·1
        assert!((p[0] - 9.0 / 12.0).abs() < 1e-15);
        let p = lm.conditional(&s(&["b", "x"]), 1).unwrap();
        // c and d: (1+1)(1+1) = 4 each; a: 1·1; b: 1·1
        assert!((p[2] - 4.0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn single_token_vocabulary_is_forced() {
        let lm = CountMaskedLm::from_corpus(&["z"], 1.0).unwrap();
        let input = tokenize("q r").unwrap();
        let d = fill_mask(&lm, &input, 1, 5, FillMode::Exact, 0).unwrap();
        assert_eq!(d.candidates.len(), 1);
        assert_eq!(d.candidates[0].weight, 1.0);
    }

    #[test]
    fn large_alpha_approaches_uniform() {
        let lm = CountMaskedLm::from_corpus(&["a b c", "a b d", "a b c"], 1e9).unwrap();
        let p = lm.conditional(&s(&["a", "x", "c"]), 1).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_vocabulary_is_a_config_error() {
        assert!(matches!(
            CountMaskedLm::from_corpus::<&str>(&[], 1.0),
            Err(Error::ConfigError(_))
        ));
        assert!(CountMaskedLm::from_corpus(&["a"], 0.0).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_sums_to_budget() {
        let lm = CountMaskedLm::from_corpus(&["a b c", "a b d", "c b a"], 0.3).unwrap();
        let input = tokenize("a b c").unwrap();
        let d1 = fill_mask(&lm, &input, 1, 100, FillMode::Sample, 11).unwrap();
        let d2 = fill_mask(&lm, &input, 1, 100, FillMode::Sample, 11).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.total_weight(), 100.0);
        let one = fill_mask(&lm, &input, 1, 1, FillMode::Sample, 3).unwrap();
        assert_eq!(one.candidates.len(), 1);
        assert_eq!(one.candidates[0].weight, 1.0);
    }

    #[test]
    fn position_out_of_range() {
        let lm = CountMaskedLm::from_corpus(&["a b"], 1.0).unwrap();
        let input = tokenize("a b").unwrap();
        assert!(matches!(
            fill_mask(&lm, &input, 2, 10, FillMode::Sample, 0),
            Err(Error::IndexError { .. })
        ));
    }
}
