use proptest::prelude::*;

use olm_core::analysis::{dataset_correlation, filter_explanations, per_input_correlation};
use olm_core::explain::{explain, explain_all_classes, ExplainSettings};
use olm_core::model::{classify, evaluate, fill_mask};
use olm_core::occlusion::PredictionCache;
use olm_core::render::{format_value, parse_html_relevance, relevance_to_rgb, render_heatmap, HeatmapFormat, HeatmapSpec, Rgb};
use olm_core::stats::welch_t_test;
use olm_core::toy::fixture::{sentiment_bow, sentiment_lm};
use olm_core::toy::EmbeddingMlpClassifier;
use olm_core::{
    tokenize_with_id, Classifier, FillMode, Method, PredictionDistribution, RelevanceMeta, RelevanceVector,
    TokenizedInput,
};

fn vocab() -> Vec<String> {
    sentiment_lm().vocabulary().to_vec()
}

fn input_strategy() -> impl Strategy<Value = TokenizedInput> {
    let n = vocab().len();
    prop::collection::vec(0..n, 2..7).prop_map(|idx| {
        let v = vocab();
        let words: Vec<&str> = idx.iter().map(|&i| v[i].as_str()).collect();
        tokenize_with_id("p", &words.join(" ")).unwrap()
    })
}

fn mlp(seed: u64, classes: usize) -> EmbeddingMlpClassifier {
    EmbeddingMlpClassifier::random("prop", &vocab(), 3, &[4], classes, seed).unwrap()
}

fn settings(mode: FillMode, seed: u64) -> ExplainSettings {
    ExplainSettings {
        mode,
        seed,
        budget: 25,
        ..Default::default()
    }
}

fn rv(values: Vec<f64>) -> RelevanceVector {
    let meta = RelevanceMeta {
        normalized: false,
        ..Default::default()
    };
    RelevanceVector::new("x", Method::Olm, 0, values, meta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occlusion_relevance_lies_in_range(seed in 0u64..1000, classes in 2usize..4, input in input_strategy(), exact in any::<bool>()) {
        let model = mlp(seed, classes);
        let lm = sentiment_lm();
        let mode = if exact { FillMode::Exact } else { FillMode::Sample };
        let cache = PredictionCache::new();
        for method in [Method::Olm, Method::Delete, Method::Unk] {
            for class in 0..classes {
                let r = explain(&model, Some(&lm), &input, method, class, &settings(mode, seed), &cache).unwrap();
                let p = r.meta.original_prediction;
                for v in &r.values {
                    prop_assert!(*v >= p - 1.0 && *v <= p, "{method} {v} outside [{}, {p}]", p - 1.0);
                }
            }
        }
    }

    #[test]
    fn relevance_sums_to_zero_over_classes(seed in 0u64..1000, classes in 2usize..5, input in input_strategy()) {
        let model = mlp(seed, classes);
        let lm = sentiment_lm();
        let all: Vec<usize> = (0..classes).collect();
        for method in [Method::Olm, Method::Delete, Method::Unk] {
            let vs = explain_all_classes(&model, Some(&lm), &input, method, &all, &settings(FillMode::Sample, seed), &PredictionCache::new()).unwrap();
            for i in 0..input.len() {
                let s: f64 = vs.iter().map(|v| v.values[i]).sum();
                prop_assert!(s.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sensitivity_methods_are_non_negative(seed in 0u64..1000, input in input_strategy()) {
        let model = mlp(seed, 3);
        let lm = sentiment_lm();
        let cache = PredictionCache::new();
        for method in [Method::OlmS, Method::SensitivityAnalysis] {
            let r = explain(&model, Some(&lm), &input, method, 1, &settings(FillMode::Sample, seed), &cache).unwrap();
            prop_assert!(r.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn explanations_are_reproducible(seed in 0u64..1000, input in input_strategy()) {
        let model = mlp(seed, 2);
        let lm = sentiment_lm();
        for method in Method::ALL {
            let a = explain(&model, Some(&lm), &input, method, 0, &settings(FillMode::Sample, seed), &PredictionCache::new()).unwrap();
            let b = explain(&model, Some(&lm), &input, method, 0, &settings(FillMode::Sample, seed), &PredictionCache::new()).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn language_model_distributions_are_valid(input in input_strategy(), seed in any::<u64>()) {
        let lm = sentiment_lm();
        for i in 0..input.len() {
            let exact = fill_mask(&lm, &input, i, 1, FillMode::Exact, seed).unwrap();
            prop_assert!(exact.validate(None).is_ok());
            let a = fill_mask(&lm, &input, i, 17, FillMode::Sample, seed).unwrap();
            let b = fill_mask(&lm, &input, i, 17, FillMode::Sample, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn toy_classifiers_output_distributions(seed in 0u64..1000, input in input_strategy()) {
        let units = input.surfaces();
        for model in [&mlp(seed, 3) as &dyn Classifier, &sentiment_bow()] {
            prop_assert!(evaluate(model, &units).is_ok());
            prop_assert!(classify(model, &input).is_ok());
        }
    }

    #[test]
    fn correlation_is_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 3..12),
        noise in prop::collection::vec(-1.0f64..1.0, 12),
        a in 0.01f64..50.0,
        b in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x + n).collect();
        let base = per_input_correlation(&rv(xs.clone()), &rv(ys.clone())).unwrap();
        let scaled = per_input_correlation(&rv(xs.iter().map(|x| a * x + b).collect()), &rv(ys.clone())).unwrap();
        let negated = per_input_correlation(&rv(xs.iter().map(|x| -x).collect()), &rv(ys)).unwrap();
        match (base, scaled, negated) {
            (Some(r), Some(s), Some(n)) => {
                prop_assert!((r - s).abs() < 1e-9);
                prop_assert!((r + n).abs() < 1e-12);
            }
            (None, None, None) => {}
            other => prop_assert!(false, "inconsistent definedness {other:?}"),
        }
    }

    #[test]
    fn correlation_matrix_is_symmetric(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 3..6)) {
        // three methods over two inputs of four units each
        let method_vectors = |k: usize| -> Vec<RelevanceVector> {
            (0..2).map(|i| {
                let mut r = rv(rows[k][i * 4..i * 4 + 4].to_vec());
                r.input_id = i.to_string();
                r
            }).collect()
        };
        let ms = [Method::Olm, Method::Delete, Method::Unk];
        let input: Vec<(Method, Vec<RelevanceVector>)> = (0..3).map(|k| (ms[k], method_vectors(k))).collect();
        if let Ok(m) = dataset_correlation(&input) {
            for i in 0..3 {
                prop_assert_eq!(m.values[i][i], 1.0);
                for j in 0..3 {
                    prop_assert_eq!(m.values[i][j], m.values[j][i]);
                    prop_assert!((-1.0..=1.0).contains(&m.values[i][j]));
                }
            }
        }
    }

    #[test]
    fn welch_swap_negates_t(a in prop::collection::vec(-5.0f64..5.0, 2..20), b in prop::collection::vec(-5.0f64..5.0, 2..20)) {
        if let (Ok(ab), Ok(ba)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
            prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }

    #[test]
    fn filtering_is_idempotent(ps in prop::collection::vec((0.0f64..1.0, 0usize..2), 0..30), min in 0.0f64..1.0) {
        let preds: Vec<PredictionDistribution> = ps.iter().map(|(p, _)| PredictionDistribution::new(vec![1.0 - p, *p]).unwrap()).collect();
        let gold: Vec<usize> = ps.iter().map(|(_, g)| *g).collect();
        let ids: Vec<usize> = (0..ps.len()).collect();
        let once = filter_explanations(&ids, &preds, &gold, min).unwrap();
        prop_assert!(once.len() <= ids.len());
        let p2: Vec<PredictionDistribution> = once.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<usize> = once.iter().map(|&i| gold[i]).collect();
        prop_assert_eq!(filter_explanations(&once, &p2, &g2, min).unwrap(), once);
    }

    #[test]
    fn negation_swaps_color_axes(v in -1.0f64..1.0, max in 1.0f64..10.0) {
        let Rgb(r, g, b) = relevance_to_rgb(v * max, max).unwrap();
        let Rgb(nr, ng, nb) = relevance_to_rgb(-v * max, max).unwrap();
        prop_assert_eq!((r, g, b), (nb, ng, nr));
        prop_assert!(r == 255 || b == 255);
    }

    #[test]
    fn html_preserves_values(values in prop::collection::vec(-1e3f64..1e3, 1..8)) {
        let words: Vec<String> = (0..values.len()).map(|i| format!("w{i}")).collect();
        let input = TokenizedInput::from_surfaces("h", &words).unwrap();
        let html = render_heatmap(&HeatmapSpec::new(input, values.clone()).unwrap(), HeatmapFormat::Html).unwrap();
        let back = parse_html_relevance(&html).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in values.iter().zip(&back) {
            prop_assert_eq!(format_value(*a), format_value(*b));
        }
    }
}
