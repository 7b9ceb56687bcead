//! Dataset-level comparison of explanation methods: correlation matrices,
//! relevance aggregation with Welch's test, and paired target analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, pearson, pearson_test, sample_variance, welch_t_test, CorrelationTest};
use crate::types::{Method, PredictionDistribution, RelevanceVector};

/// Pearson correlation of two explanations of the same input; `None` when
/// either has zero variance.
pub fn per_input_correlation(r1: &RelevanceVector, r2: &RelevanceVector) -> Result<Option<f64>> {
    if r1.input_id != r2.input_id {
        return Err(Error::ShapeError(format!(
            "correlating explanations of different inputs {:?} and {:?}",
            r1.input_id, r2.input_id
        )));
    }
    if r1.values.len() != r2.values.len() || r1.excluded != r2.excluded {
        return Err(Error::ShapeError(format!(
            "explanations of {:?} cover {} and {} units",
            r1.input_id,
            r1.values.len(),
            r2.values.len()
        )));
    }
    pearson(&r1.feature_values(), &r2.feature_values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCorrelationMatrix {
    pub methods: Vec<Method>,
    pub values: Vec<Vec<f64>>,
    /// Inputs contributing to each cell.
    pub n_inputs_used: Vec<Vec<usize>>,
    /// Inputs whose correlation was undefined for that cell.
    pub n_inputs_skipped: Vec<Vec<usize>>,
}

impl MethodCorrelationMatrix {
    pub fn get(&self, a: Method, b: Method) -> Option<f64> {
        let i = self.methods.iter().position(|m| *m == a)?;
        let j = self.methods.iter().position(|m| *m == b)?;
        Some(self.values[i][j])
    }

    pub fn total_skipped(&self) -> usize {
        let n = self.methods.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.n_inputs_skipped[i][j])
            .sum()
    }
}

/// Mean per-input correlation for every pair of methods. Each entry of
/// `explanations` holds one method's vectors, aligned by input.
pub fn dataset_correlation(explanations: &[(Method, Vec<RelevanceVector>)]) -> Result<MethodCorrelationMatrix> {
    if explanations.is_empty() {
        return Err(Error::InsufficientData("no methods to correlate".into()));
    }
    let n_inputs = explanations[0].1.len();
    for (method, vectors) in explanations {
        if vectors.len() != n_inputs {
            return Err(Error::ShapeError(format!(
                "{method} covers {} inputs, expected {n_inputs}",
                vectors.len()
            )));
        }
    }
    let k = explanations.len();
    let mut values = vec![vec![0.0; k]; k];
    let mut used = vec![vec![0usize; k]; k];
    let mut skipped = vec![vec![0usize; k]; k];
    for i in 0..k {
        for j in i..k {
            let mut sum = 0.0;
            let mut n = 0;
            for (a, b) in explanations[i].1.iter().zip(&explanations[j].1) {
                match per_input_correlation(a, b)? {
                    Some(r) => {
                        sum += r;
                        n += 1;
                    }
                    None => skipped[i][j] += 1,
                }
            }
            if n == 0 {
                return Err(Error::InsufficientData(format!(
                    "no input has a defined correlation between {} and {}",
                    explanations[i].0, explanations[j].0
                )));
            }
            values[i][j] = if i == j { 1.0 } else { sum / n as f64 };
            used[i][j] = n;
            values[j][i] = values[i][j];
            used[j][i] = n;
            skipped[j][i] = skipped[i][j];
        }
    }
    Ok(MethodCorrelationMatrix {
        methods: explanations.iter().map(|(m, _)| *m).collect(),
        values,
        n_inputs_used: used,
        n_inputs_skipped: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Avg,
    Sum,
    /// Signed maximum.
    Max,
    MaxAbs,
}

impl Aggregation {
    pub const DEFAULT_SET: [Aggregation; 3] = [Aggregation::Avg, Aggregation::Sum, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Avg => "avg",
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
            Aggregation::MaxAbs => "max_abs",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" | "mean" => Ok(Aggregation::Avg),
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            "max_abs" | "maxabs" => Ok(Aggregation::MaxAbs),
            other => Err(Error::ConfigError(format!("unknown aggregation {other:?}"))),
        }
    }
}

pub fn aggregate_values(values: &[f64], how: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::ShapeError("aggregating an empty relevance vector".into()));
    }
    Ok(match how {
        Aggregation::Avg => mean(values),
        Aggregation::Sum => values.iter().sum(),
        Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::MaxAbs => values.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
    })
}

/// Aggregates the feature positions of `r`.
pub fn aggregate_relevance(r: &RelevanceVector, how: Aggregation) -> Result<f64> {
    aggregate_values(&r.feature_values(), how)
}

/// Whether a prediction is correct and confident enough to keep.
pub fn passes_filter(prediction: &PredictionDistribution, gold: usize, min_probability: f64) -> bool {
    let (class, p) = prediction.argmax();
    class == gold && p >= min_probability
}

/// Keeps the records whose prediction is correct with probability at least
/// `min_probability`.
pub fn filter_explanations<T: Clone>(
    records: &[T],
    predictions: &[PredictionDistribution],
    gold_labels: &[usize],
    min_probability: f64,
) -> Result<Vec<T>> {
    if records.len() != predictions.len() || records.len() != gold_labels.len() {
        return Err(Error::ShapeError(format!(
            "{} records, {} predictions, {} labels",
            records.len(),
            predictions.len(),
            gold_labels.len()
        )));
    }
    Ok(records
        .iter()
        .zip(predictions)
        .zip(gold_labels)
        .filter(|((_, p), &g)| passes_filter(p, g, min_probability))
        .map(|((r, _), _)| r.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub require_correct: bool,
    pub min_probability: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            require_correct: true,
            min_probability: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStatistics {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub sample_count: usize,
    /// Keyed by aggregation, in the report's aggregation order.
    pub statistics: Vec<GroupStatistics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTest {
    pub aggregation: Aggregation,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub method: Method,
    pub aggregations: Vec<Aggregation>,
    pub group_a: GroupSummary,
    pub group_b: GroupSummary,
    pub tests: Vec<AggregationTest>,
    pub filter: FilterSettings,
}

fn summarize(label: &str, aggregated: &[Vec<f64>]) -> GroupSummary {
    GroupSummary {
        label: label.to_string(),
        sample_count: aggregated.first().map_or(0, Vec::len),
        statistics: aggregated
            .iter()
            .map(|xs| GroupStatistics {
                mean: mean(xs),
                variance: sample_variance(xs),
            })
            .collect(),
    }
}

/// Compares two groups of (already filtered) explanations per aggregation.
pub fn significance_report(
    method: Method,
    group_a: (&str, &[RelevanceVector]),
    group_b: (&str, &[RelevanceVector]),
    aggregations: &[Aggregation],
    filter: FilterSettings,
) -> Result<SignificanceReport> {
    if aggregations.is_empty() {
        return Err(Error::ConfigError("no aggregation requested".into()));
    }
    for (label, vectors) in [group_a, group_b] {
        if vectors.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "group {label:?} has {} explanations after filtering, need at least 2",
                vectors.len()
            )));
        }
    }
    let aggregate = |vectors: &[RelevanceVector]| -> Result<Vec<Vec<f64>>> {
        aggregations
            .iter()
            .map(|&how| vectors.iter().map(|r| aggregate_relevance(r, how)).collect())
            .collect()
    };
    let a = aggregate(group_a.1)?;
    let b = aggregate(group_b.1)?;
    let tests = aggregations
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(&aggregation, (xa, xb))| {
            let w = welch_t_test(xa, xb)?;
            Ok(AggregationTest {
                aggregation,
                t_statistic: w.t_statistic,
                degrees_of_freedom: w.degrees_of_freedom,
                p_value: w.p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignificanceReport {
        method,
        aggregations: aggregations.to_vec(),
        group_a: summarize(group_a.0, &a),
        group_b: summarize(group_b.0, &b),
        tests,
        filter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRelevanceRecord {
    pub pair_id: String,
    /// Target unit relevance in the first (unacceptable) sentence.
    pub relevance_a: f64,
    /// Target unit relevance in the second (acceptable) sentence.
    pub relevance_b: f64,
    pub target_kind: String,
}

/// Pearson r across pairs with its two-sided p-value.
pub fn paired_target_correlation(pairs: &[PairedRelevanceRecord]) -> Result<CorrelationTest> {
    let a: Vec<f64> = pairs.iter().map(|p| p.relevance_a).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.relevance_b).collect();
    pearson_test(&a, &b)
}

/// Mean target relevance against mean relevance over all feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub n: usize,
    pub target_mean: f64,
    pub word_mean: f64,
}

pub fn target_summary(items: &[(&RelevanceVector, usize)]) -> Result<TargetSummary> {
    if items.is_empty() {
        return Err(Error::InsufficientData("no explanations to summarize".into()));
    }
    let mut targets = Vec::with_capacity(items.len());
    let mut words = Vec::new();
    for (r, target) in items {
        let value = *r.values.get(*target).ok_or(Error::IndexError {
            position: *target,
            len: r.values.len(),
        })?;
        targets.push(value);
        words.extend(r.feature_values());
    }
    Ok(TargetSummary {
        n: items.len(),
        target_mean: mean(&targets),
        word_mean: mean(&words),
    })
}
