use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const OLM: &str = env!("CARGO_BIN_EXE_olm");

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn olm(args: &[&str]) -> Output {
    Command::new(OLM).args(args).output().expect("olm runs")
}

fn ok(args: &[&str]) -> Output {
    let out = olm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn naive_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn reference_sentence_gets_seven_unit_explanation_and_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["explain", "--dataset", &fixture("table2.tsv"), "--out", out.to_str().unwrap()]);
    let lines = jsonl(&out.join("explanations.jsonl"));
    assert_eq!(lines[0]["run_config"]["seed"], 0);
    assert_eq!(lines[0]["run_config"]["budget"], 100);
    assert_eq!(lines.len(), 2);
    let r = &lines[1]["relevance"];
    assert_eq!(r["method"], "olm");
    assert_eq!(r["values"].as_array().unwrap().len(), 7);
    let html = std::fs::read_to_string(out.join("heatmaps/t2.html")).unwrap();
    assert!(html.contains("olm-run-config"));
    assert_eq!(html.matches("data-relevance=").count(), 7);
    assert_eq!(jsonl(&out.join("traces.jsonl")).len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, command: &str, methods: &str| -> PathBuf {
        let out = dir.path().join(name);
        ok(&[
            command, "--dataset", "bundled:sentiment", "--model", "bundled:sentiment-mlp", "--methods", methods, "--seed",
            "13", "--budget", "30", "--min-prob", "0.5", "--out", out.to_str().unwrap(),
        ]);
        out
    };
    for (command, methods, files) in [
        ("explain", "olm,olm_s,delete,unk,ig", vec!["explanations.jsonl", "traces.jsonl", "summary.json", "heatmaps/s07.html"]),
        ("correlate", "olm,delete,unk", vec!["correlation.json", "correlation.txt"]),
        ("stats", "olm,delete", vec!["stats.json"]),
    ] {
        let a = run(&format!("{command}-a"), command, methods);
        let b = run(&format!("{command}-b"), command, methods);
        for f in files {
            let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
            assert!(!x.is_empty());
            assert!(x == y, "{command}: {f} differs between runs");
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let values = |workers: &str| -> Vec<Value> {
        let out = dir.path().join(workers);
        ok(&["explain", "--dataset", "bundled:sentiment", "--methods", "olm,unk", "--workers", workers, "--out", out.to_str().unwrap()]);
        jsonl(&out.join("explanations.jsonl"))[1..].to_vec()
    };
    assert_eq!(values("1"), values("7"));
}

#[test]
fn correlation_matrix_matches_scripted_means() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--dataset", "bundled:sentiment", "--methods", "olm,delete,unk", "--seed", "3"];
    let explained = dir.path().join("e");
    let correlated = dir.path().join("c");
    ok(&[&["explain"], &common[..], &["--out", explained.to_str().unwrap()]].concat());
    let stdout = ok(&[&["correlate"], &common[..], &["--out", correlated.to_str().unwrap()]].concat()).stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("OLM"));

    let methods = ["olm", "delete", "unk"];
    let lines = jsonl(&explained.join("explanations.jsonl"));
    let by_method = |m: &str| -> Vec<Vec<f64>> {
        lines[1..].iter().filter(|l| l["relevance"]["method"] == m).map(|l| floats(&l["relevance"]["values"])).collect()
    };
    let report = read_json(&correlated.join("correlation.json"));
    assert_eq!(report["seed"], 3);
    let matrix = &report["matrix"]["values"];
    for (i, a) in methods.iter().enumerate() {
        for (j, b) in methods.iter().enumerate() {
            let cell = matrix[i][j].as_f64().unwrap();
            assert_eq!(cell, matrix[j][i].as_f64().unwrap());
            if i == j {
                assert_eq!(cell, 1.0);
                continue;
            }
            let rs: Vec<f64> = by_method(a)
                .iter()
                .zip(by_method(b))
                .filter(|(x, y)| naive_r(x, y).is_finite())
                .map(|(x, y)| naive_r(x, &y))
                .collect();
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            assert!((cell - mean).abs() < 1e-12, "{a}/{b}: {cell} vs {mean}");
            if i == 0 {
                assert!(cell < 1.0);
            }
        }
    }
}

#[test]
fn correlate_needs_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = olm(&["correlate", "--dataset", "bundled:sentiment", "--methods", "olm", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_reports_the_filter() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["stats", "--dataset", "bundled:sentiment", "--model", "bundled:sentiment-mlp", "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("method OLM, filter: correct, p >= 0.90"), "{text}");
    let report = read_json(&dir.path().join("stats.json"));
    assert_eq!(report["run_config"]["min_prob"], 0.9);
    let tests = report["reports"][0]["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 3);
    for t in tests {
        let p = t["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn stats_fails_when_filtering_empties_a_group() {
    let dir = tempfile::tempdir().unwrap();
    let out = olm(&["stats", "--dataset", "bundled:sentiment", "--min-prob", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("after filtering"));
}

#[test]
fn axiom_run_shows_olm_row_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["axioms", "--out", dir.path().to_str().unwrap()]);
    let table = String::from_utf8(out.stdout).unwrap();
    let olm_row = table.lines().find(|l| l.starts_with("olm ")).unwrap();
    assert_eq!(olm_row.matches("pass").count(), 4, "{olm_row}");
    assert_eq!(olm_row.matches("FAIL").count(), 1);

    let report = read_json(&dir.path().join("axioms.json"));
    let schema: Value =
        serde_json::from_str(include_str!("../../../docs/axiom_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 35);
    for r in reports {
        assert!(validator.is_valid(r), "{r}");
        if r["method"] == "olm" {
            let expected = if r["axiom"] == "completeness" { "violated" } else { "satisfied" };
            assert_eq!(r["verdict"], expected, "{r}");
        }
    }
}

#[test]
fn pair_analysis_reports_target_and_word_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs");
    ok(&["pair-analysis", "--dataset", &fixture("pairs.tsv"), "--min-prob", "0", "--out", out.to_str().unwrap()]);
    let report = read_json(&out.join("pair_analysis.json"));
    assert_eq!(report["pairs_total"], 5);
    assert_eq!(report["pairs_used"], 5);
    let m = &report["methods"][0];
    assert_eq!(m["correlation"]["n"], 5);
    for side in ["group_a", "group_b"] {
        let s = &m[side]["summary"];
        assert!(s["target_mean"].as_f64().unwrap() > s["word_mean"].as_f64().unwrap());
    }
    assert_eq!(m["group_a"]["label"], 0);
}

#[test]
fn pair_analysis_needs_three_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("few.tsv");
    let text = std::fs::read_to_string(fixture("pairs.tsv")).unwrap();
    std::fs::write(&data, text.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
    let out = olm(&["pair-analysis", "--dataset", data.to_str().unwrap(), "--min-prob", "0", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sentence_pairs_exclude_the_separator() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["explain", "--dataset", &fixture("sentence_pairs.tsv"), "--separator", "||", "--out", dir.path().to_str().unwrap()]);
    let lines = jsonl(&dir.path().join("explanations.jsonl"));
    assert_eq!(lines[1]["input"]["units"][5]["surface"], "||");
    assert_eq!(lines[1]["relevance"]["excluded"], serde_json::json!([5]));
}

#[test]
fn empty_dataset_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.tsv");
    std::fs::write(&data, "id\tsentence\tlabel\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = olm(&["explain", "--dataset", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn unreadable_dataset_and_unreachable_backend_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(olm(&["explain", "--dataset", "/nonexistent.tsv", "--out", out]).status.code(), Some(1));
    let unreachable = olm(&["explain", "--dataset", "bundled:sentiment", "--model", "http://127.0.0.1:1/", "--out", out]);
    assert_eq!(unreachable.status.code(), Some(1));
    assert_eq!(olm(&["explain", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn per_record_failures_exit_two_with_error_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    std::fs::write(&data, "id\tsentence\tlabel\na\tgood film\t1\nb\tbad film\t\n").unwrap();
    let out = dir.path().join("out");
    let run = olm(&["explain", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let errors = jsonl(&out.join("errors.jsonl"));
    assert_eq!(errors[1]["id"], "b");
    assert_eq!(read_json(&out.join("summary.json"))["explained"], 1);
}

#[test]
fn stdio_backend_matches_in_process_models() {
    let dir = tempfile::tempdir().unwrap();
    let local = dir.path().join("local");
    let remote = dir.path().join("remote");
    let common = ["explain", "--dataset", "bundled:sentiment", "--methods", "olm,delete", "--seed", "5", "--workers", "2"];
    ok(&[&common[..], &["--model", "bundled:sentiment-mlp", "--out", local.to_str().unwrap()]].concat());
    let model = format!("stdio:{OLM} serve --model bundled:sentiment-mlp");
    let lm = format!("stdio:{OLM} serve --lm bundled:sentiment-lm");
    ok(&[&common[..], &["--model", &model, "--lm", &lm, "--out", remote.to_str().unwrap()]].concat());
    let strip = |p: &Path| -> Vec<Value> { jsonl(&p.join("explanations.jsonl"))[1..].to_vec() };
    assert_eq!(strip(&local), strip(&remote));
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.ini");
    std::fs::write(&config, "dataset = bundled:sentiment\nbudget = 12\nseed = 4\nmethods = delete\n").unwrap();
    let out = dir.path().join("o");
    ok(&["explain", "--config", config.to_str().unwrap(), "--seed", "8", "--out", out.to_str().unwrap()]);
    let header = &jsonl(&out.join("explanations.jsonl"))[0]["run_config"];
    assert_eq!(header["budget"], 12);
    assert_eq!(header["seed"], 8);
    assert_eq!(header["methods"], serde_json::json!(["delete"]));
}

#[test]
fn render_round_trips_explanations() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["explain", "--dataset", &fixture("table2.tsv"), "--methods", "olm,delete", "--out", run.to_str().unwrap()]);
    let explanations = run.join("explanations.jsonl");
    let ansi = ok(&["render", "--input", explanations.to_str().unwrap(), "--style", "ansi"]).stdout;
    let ansi = String::from_utf8(ansi).unwrap();
    assert!(ansi.contains("\x1b[48;2;"));
    assert!(ansi.contains("OLM: ") && ansi.contains("Del: "));
    let html_dir = dir.path().join("html");
    ok(&["render", "--input", explanations.to_str().unwrap(), "--out", html_dir.to_str().unwrap()]);
    let rendered = std::fs::read_to_string(html_dir.join("t2.html")).unwrap();
    let original = std::fs::read_to_string(run.join("heatmaps/t2.html")).unwrap();
    assert_eq!(rendered, original);
}
