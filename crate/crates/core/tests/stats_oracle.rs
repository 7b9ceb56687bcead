//! Statistics checked against reference values frozen from scipy.stats
//! (`ttest_ind(equal_var=False)` and `pearsonr`).

use olm_core::analysis::{dataset_correlation, per_input_correlation};
use olm_core::stats::{pearson_test, welch_t_test};
use olm_core::{Method, RelevanceMeta, RelevanceVector};
use serde::Deserialize;

#[derive(Deserialize)]
struct WelchCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct PearsonCase {
    x: Vec<f64>,
    y: Vec<f64>,
    r: f64,
    p: f64,
}

#[derive(Deserialize)]
struct Oracle {
    welch: Vec<WelchCase>,
    pearson: Vec<PearsonCase>,
}

fn oracle() -> Oracle {
    serde_json::from_str(include_str!("fixtures/stats_oracle.json")).unwrap()
}

#[test]
fn welch_matches_reference() {
    for case in oracle().welch {
        let w = welch_t_test(&case.a, &case.b).unwrap();
        assert!((w.t_statistic - case.t).abs() < 1e-6, "t {} vs {}", w.t_statistic, case.t);
        assert!((w.degrees_of_freedom - case.df).abs() < 1e-6);
        assert!((w.p_value - case.p).abs() < 1e-4, "p {} vs {}", w.p_value, case.p);
    }
}

#[test]
fn pearson_matches_reference() {
    for case in oracle().pearson {
        let c = pearson_test(&case.x, &case.y).unwrap();
        assert!((c.r - case.r).abs() < 1e-12);
        assert!((c.p_value - case.p).abs() < 1e-4);
    }
}

#[derive(Deserialize)]
struct MeanInput {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
struct DatasetMean {
    inputs: Vec<MeanInput>,
    per_input_r: Vec<f64>,
    mean: f64,
}

#[test]
fn dataset_mean_matches_reference() {
    let text = include_str!("fixtures/stats_oracle.json");
    let case: DatasetMean = serde_json::from_value(serde_json::from_str::<serde_json::Value>(text).unwrap()["dataset_mean"].clone()).unwrap();
    let meta = || RelevanceMeta {
        normalized: false,
        ..Default::default()
    };
    let side = |m: Method, pick: fn(&MeanInput) -> &Vec<f64>| -> Vec<RelevanceVector> {
        case.inputs
            .iter()
            .enumerate()
            .map(|(i, x)| RelevanceVector::new(i.to_string(), m, 0, pick(x).clone(), meta()).unwrap())
            .collect()
    };
    let (a, b) = (side(Method::Olm, |x| &x.a), side(Method::Delete, |x| &x.b));
    for ((ra, rb), expected) in a.iter().zip(&b).zip(&case.per_input_r) {
        assert!((per_input_correlation(ra, rb).unwrap().unwrap() - expected).abs() < 1e-12);
    }
    let m = dataset_correlation(&[(Method::Olm, a), (Method::Delete, b)]).unwrap();
    assert!((m.values[0][1] - case.mean).abs() < 1e-12);
}
