use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use olm_core::analysis::{
    dataset_correlation, paired_target_correlation, significance_report, target_summary, Aggregation,
    FilterSettings, PairedRelevanceRecord,
};
use olm_core::stats::pearson_test;
use olm_core::{Method, RelevanceMeta, RelevanceVector};

fn rv(id: &str, method: Method, values: Vec<f64>) -> RelevanceVector {
    let meta = RelevanceMeta {
        normalized: false,
        ..Default::default()
    };
    RelevanceVector::new(id, method, 0, values, meta).unwrap()
}

// Textbook two-pass Pearson r, kept separate from the library code.
fn naive_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn shifted_groups_differ_significantly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut group = |shift: f64, prefix: &str| -> Vec<RelevanceVector> {
        (0..30)
            .map(|i| rv(&format!("{prefix}{i}"), Method::Olm, (0..6).map(|_| rng.gen::<f64>() + shift).collect()))
            .collect()
    };
    let a = group(0.0, "a");
    let b = group(0.5, "b");
    let report = significance_report(
        Method::Olm,
        ("low", &a),
        ("high", &b),
        &[Aggregation::Avg, Aggregation::Sum, Aggregation::Max],
        FilterSettings::default(),
    )
    .unwrap();
    for test in &report.tests {
        assert!(test.p_value < 0.01, "{:?}", test);
        assert!(test.t_statistic < 0.0);
    }
}

#[test]
fn independent_pairs_are_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<PairedRelevanceRecord> = (0..1000)
        .map(|i| PairedRelevanceRecord {
            pair_id: i.to_string(),
            relevance_a: rng.gen_range(-1.0..1.0),
            relevance_b: rng.gen_range(-1.0..1.0),
            target_kind: "verb".into(),
        })
        .collect();
    let c = paired_target_correlation(&pairs).unwrap();
    assert_eq!(c.n, 1000);
    assert!(c.r.abs() < 0.1, "r = {}", c.r);
}

#[test]
fn verb_frame_pairs() {
    // (relevance of the verb in the unacceptable sentence, in the acceptable one)
    let table = [
        (0.41, 0.12),
        (0.35, 0.10),
        (0.52, 0.20),
        (0.18, 0.05),
        (0.27, 0.02),
        (0.60, 0.25),
        (0.33, 0.15),
        (0.22, 0.04),
        (0.47, 0.18),
        (0.39, 0.09),
    ];
    let pairs: Vec<PairedRelevanceRecord> = table
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| PairedRelevanceRecord {
            pair_id: format!("v{i}"),
            relevance_a: a,
            relevance_b: b,
            target_kind: "verb".into(),
        })
        .collect();
    let c = paired_target_correlation(&pairs).unwrap();
    let a: Vec<f64> = table.iter().map(|p| p.0).collect();
    let b: Vec<f64> = table.iter().map(|p| p.1).collect();
    assert!((c.r - naive_r(&a, &b)).abs() < 1e-12);
    assert!(c.p_value < 0.01);

    // four-unit sentences with the verb at position 1
    let vectors: Vec<RelevanceVector> = table
        .iter()
        .enumerate()
        .map(|(i, &(a, _))| rv(&format!("v{i}"), Method::Olm, vec![0.01, a, -0.02, 0.03]))
        .collect();
    let items: Vec<(&RelevanceVector, usize)> = vectors.iter().map(|r| (r, 1)).collect();
    let s = target_summary(&items).unwrap();
    let target_mean = a.iter().sum::<f64>() / 10.0;
    assert_eq!(s.n, 10);
    assert!((s.target_mean - target_mean).abs() < 1e-12);
    assert!((s.word_mean - (target_mean + 0.02) / 4.0).abs() < 1e-12);
    assert!(s.target_mean > s.word_mean);
}

#[test]
fn dataset_correlation_matches_naive_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let methods = [Method::Olm, Method::Delete, Method::Unk];
    let data: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..12).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    let input: Vec<(Method, Vec<RelevanceVector>)> = methods
        .iter()
        .zip(&data)
        .map(|(&m, rows)| {
            (m, rows.iter().enumerate().map(|(i, v)| rv(&i.to_string(), m, v.clone())).collect())
        })
        .collect();
    let matrix = dataset_correlation(&input).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j {
                1.0
            } else {
                (0..12).map(|k| naive_r(&data[i][k], &data[j][k])).sum::<f64>() / 12.0
            };
            assert!((matrix.values[i][j] - expected).abs() < 1e-12);
            assert_eq!(matrix.n_inputs_used[i][j], 12);
        }
    }
    assert_eq!(matrix.total_skipped(), 0);
}

#[test]
fn constant_vectors_are_skipped_and_counted() {
    let a = vec![rv("0", Method::Olm, vec![1.0, 2.0, 3.0]), rv("1", Method::Olm, vec![0.5, 0.5, 0.5])];
    let b = vec![rv("0", Method::Delete, vec![3.0, 2.0, 1.0]), rv("1", Method::Delete, vec![1.0, 0.0, 2.0])];
    let m = dataset_correlation(&[(Method::Olm, a), (Method::Delete, b)]).unwrap();
    assert!((m.values[0][1] + 1.0).abs() < 1e-12);
    assert_eq!(m.n_inputs_used[0][1], 1);
    assert_eq!(m.n_inputs_skipped[0][1], 1);
}

#[test]
fn pearson_test_agrees_with_naive_r() {
    let x = [1.0, 2.0, 4.0, 3.0, 7.0];
    let y = [2.0, 1.5, 5.0, 2.5, 6.0];
    assert!((pearson_test(&x, &y).unwrap().r - naive_r(&x, &y)).abs() < 1e-12);
}

#[test]
fn identical_groups_give_t_zero_and_p_one() {
    let group: Vec<RelevanceVector> =
        (0..5).map(|i| rv(&i.to_string(), Method::Olm, vec![0.1 * i as f64, 0.3, -0.2 + 0.05 * i as f64])).collect();
    let report =
        significance_report(Method::Olm, ("a", &group), ("b", &group), &Aggregation::DEFAULT_SET, FilterSettings::default())
            .unwrap();
    for test in &report.tests {
        assert_eq!(test.t_statistic, 0.0);
        assert_eq!(test.p_value, 1.0);
    }
}

#[test]
fn anti_correlated_targets_give_r_near_minus_one() {
    let pairs: Vec<PairedRelevanceRecord> = (0..8)
        .map(|i| {
            let x = 0.1 * i as f64;
            PairedRelevanceRecord {
                pair_id: i.to_string(),
                relevance_a: x,
                relevance_b: 0.5 - 2.0 * x + if i % 2 == 0 { 1e-3 } else { -1e-3 },
                target_kind: "verb".into(),
            }
        })
        .collect();
    let c = paired_target_correlation(&pairs).unwrap();
    assert!(c.r < -0.999, "r = {}", c.r);
}
