//! Subcommand implementations. Each returns whether some records failed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use olm_core::analysis::{
    dataset_correlation, filter_explanations, paired_target_correlation, significance_report, target_summary,
    FilterSettings, MethodCorrelationMatrix, PairedRelevanceRecord, SignificanceReport, TargetSummary,
};
use olm_core::axioms::{run_suite, AxiomReport, SuiteOptions};
use olm_core::model::protocol;
use olm_core::occlusion::ResampleTrace;
use olm_core::render::{render_heatmap, render_table, HeatmapFormat, HeatmapSpec};
use olm_core::stats::CorrelationTest;
use olm_core::toy::fixture::bundled_fixtures;
use olm_core::{Method, RelevanceVector, TokenizedInput};

use crate::config::RunConfig;
use crate::models;
use crate::pipeline::{explain_records, load_records, Batch, Explained, Models, RecordError};

/// Whether the run finished with per-record failures.
pub type Partial = bool;

fn create_out(config: &RunConfig) -> Result<&Path> {
    let out = config.out_dir()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, header: &RunConfig, lines: impl IntoIterator<Item = T>) -> Result<()> {
    let mut text = serde_json::to_string(&Header { run_config: header })?;
    text.push('\n');
    for line in lines {
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct Header<C> {
    run_config: C,
}

#[derive(Serialize)]
struct Report<'a, T> {
    run_config: &'a RunConfig,
    seed: u64,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    failed_records: &'a [RecordError],
    #[serde(flatten)]
    body: T,
}

fn report<'a, T>(config: &'a RunConfig, errors: &'a [RecordError], body: T) -> Report<'a, T> {
    Report {
        run_config: config,
        seed: config.seed,
        failed_records: errors,
        body,
    }
}

/// Writes the per-record error log when there is one.
fn log_errors(out: &Path, config: &RunConfig, batch: &Batch) -> Result<Partial> {
    if batch.errors.is_empty() {
        return Ok(false);
    }
    write_jsonl(&out.join("errors.jsonl"), config, &batch.errors)?;
    for e in &batch.errors {
        eprintln!("record {} failed: {}", e.id, e.error);
    }
    Ok(true)
}

fn run_batch(config: &RunConfig) -> Result<Batch> {
    let models = Models::load(config)?;
    let records = load_records(config, models.classifier.as_ref())?;
    explain_records(&records, &models, config)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn config_script(config: &RunConfig) -> Result<String> {
    let json = serde_json::to_string(&Header { run_config: config })?.replace('<', "\\u003c");
    Ok(format!("<script type=\"application/json\" class=\"olm-run-config\">{json}</script>\n"))
}

fn heatmap_page(input: &TokenizedInput, vectors: &[RelevanceVector], config: &RunConfig) -> Result<String> {
    let mut html = config_script(config)?;
    for v in vectors {
        let spec = HeatmapSpec::from_relevance(input.clone(), v)?.with_label(v.method.label());
        html.push_str(&render_heatmap(&spec, HeatmapFormat::Html)?);
        html.push('\n');
    }
    Ok(html)
}

#[derive(Serialize, Deserialize)]
pub struct ExplanationLine {
    pub input: TokenizedInput,
    pub prediction: Vec<f64>,
    pub relevance: RelevanceVector,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    input_id: &'a str,
    method: Method,
    traces: &'a [ResampleTrace],
}

#[derive(Serialize)]
struct ExplainSummary {
    records: usize,
    explained: usize,
    failed: usize,
}

pub fn explain_cmd(config: &RunConfig) -> Result<Partial> {
    let batch = run_batch(config)?;
    let out = create_out(config)?;
    let lines = batch.explained.iter().flat_map(|e| {
        e.vectors.iter().map(|v| ExplanationLine {
            input: e.record.input.clone(),
            prediction: e.prediction.probs().to_vec(),
            relevance: v.clone(),
        })
    });
    write_jsonl(&out.join("explanations.jsonl"), config, lines)?;
    let traces = batch.explained.iter().flat_map(|e| {
        e.traces.iter().map(|(method, traces)| TraceLine {
            input_id: e.record.id(),
            method: *method,
            traces,
        })
    });
    write_jsonl(&out.join("traces.jsonl"), config, traces)?;
    let heatmaps = out.join("heatmaps");
    fs::create_dir_all(&heatmaps)?;
    for e in &batch.explained {
        let page = heatmap_page(&e.record.input, &e.vectors, config)?;
        write_text(&heatmaps.join(format!("{}.html", file_stem(e.record.id()))), &page)?;
    }
    let summary = ExplainSummary {
        records: batch.explained.len() + batch.errors.len(),
        explained: batch.explained.len(),
        failed: batch.errors.len(),
    };
    write_json(&out.join("summary.json"), &report(config, &batch.errors, summary))?;
    println!(
        "explained {} of {} records with {} method(s) into {}",
        batch.explained.len(),
        batch.explained.len() + batch.errors.len(),
        config.methods.len(),
        out.display()
    );
    log_errors(out, config, &batch)
}

#[derive(Serialize)]
struct CorrelationBody<'a> {
    matrix: &'a MethodCorrelationMatrix,
}

fn per_method(explained: &[Explained], methods: &[Method]) -> Vec<(Method, Vec<RelevanceVector>)> {
    methods
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, explained.iter().map(|e| e.vectors[k].clone()).collect()))
        .collect()
}

pub fn correlate_cmd(config: &RunConfig) -> Result<Partial> {
    if config.methods.len() < 2 {
        bail!("correlate needs at least two methods");
    }
    let batch = run_batch(config)?;
    let matrix = dataset_correlation(&per_method(&batch.explained, &config.methods))?;
    let out = create_out(config)?;
    write_json(&out.join("correlation.json"), &report(config, &batch.errors, CorrelationBody { matrix: &matrix }))?;
    let table = render_table(&matrix);
    write_text(&out.join("correlation.txt"), &table)?;
    print!("{table}");
    log_errors(out, config, &batch)
}

/// Correct, confident explanations only.
fn filtered<'a>(explained: &'a [Explained], config: &RunConfig) -> Result<Vec<&'a Explained>> {
    let refs: Vec<&Explained> = explained.iter().filter(|e| e.record.label.is_some()).collect();
    let predictions: Vec<_> = refs.iter().map(|e| e.prediction.clone()).collect();
    let gold: Vec<usize> = refs.iter().map(|e| e.record.label.unwrap_or_default()).collect();
    Ok(filter_explanations(&refs, &predictions, &gold, config.min_prob)?)
}

fn filter_settings(config: &RunConfig) -> FilterSettings {
    FilterSettings {
        require_correct: config.require_correct,
        min_probability: config.min_prob,
    }
}

#[derive(Serialize)]
struct StatsBody<'a> {
    groups: (usize, usize),
    kept_after_filter: usize,
    reports: &'a [SignificanceReport],
}

pub fn stats_cmd(config: &RunConfig) -> Result<Partial> {
    let batch = run_batch(config)?;
    let groups = match config.groups {
        Some(g) => g,
        None => {
            let labels: std::collections::BTreeSet<usize> =
                batch.explained.iter().filter_map(|e| e.record.label).collect();
            match labels.iter().copied().collect::<Vec<_>>().as_slice() {
                [a, b] => (*a, *b),
                other => bail!("dataset has gold labels {other:?}; pick two with --groups"),
            }
        }
    };
    let kept = filtered(&batch.explained, config)?;
    let reports = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let group = |label: usize| -> Vec<RelevanceVector> {
                kept.iter().filter(|e| e.record.label == Some(label)).map(|e| e.vectors[k].clone()).collect()
            };
            let (a, b) = (group(groups.0), group(groups.1));
            significance_report(
                method,
                (&format!("label {}", groups.0), &a),
                (&format!("label {}", groups.1), &b),
                &config.aggregations,
                filter_settings(config),
            )
            .with_context(|| format!("{method}: {} of {} explanations kept by the filter", kept.len(), batch.explained.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = create_out(config)?;
    let body = StatsBody {
        groups,
        kept_after_filter: kept.len(),
        reports: &reports,
    };
    write_json(&out.join("stats.json"), &report(config, &batch.errors, body))?;
    let text: Vec<String> = reports.iter().map(render_table).collect();
    let text = text.join("\n");
    write_text(&out.join("stats.txt"), &text)?;
    print!("{text}");
    log_errors(out, config, &batch)
}

#[derive(Serialize)]
struct AxiomsBody<'a> {
    fixtures: Vec<String>,
    reports: &'a [AxiomReport],
}

pub fn axioms_cmd(config: &RunConfig) -> Result<Partial> {
    let options = SuiteOptions {
        methods: config.methods.clone(),
        settings: config.settings(),
        tolerance: config.tolerance,
        ..Default::default()
    };
    let fixtures = bundled_fixtures();
    let reports = run_suite(&fixtures, &options)?;
    let out = create_out(config)?;
    let body = AxiomsBody {
        fixtures: fixtures.iter().map(|f| f.name.clone()).collect(),
        reports: &reports,
    };
    write_json(&out.join("axioms.json"), &report(config, &[], body))?;
    let table = render_table(reports.as_slice());
    write_text(&out.join("axioms.txt"), &table)?;
    print!("{table}");
    Ok(false)
}

#[derive(Serialize)]
struct PairGroup {
    label: usize,
    summary: TargetSummary,
}

#[derive(Serialize)]
struct PairMethodReport {
    method: Method,
    correlation: CorrelationTest,
    group_a: PairGroup,
    group_b: PairGroup,
    pairs: Vec<PairedRelevanceRecord>,
}

#[derive(Serialize)]
struct PairBody {
    pairs_total: usize,
    pairs_used: usize,
    pairs_dropped_by_filter: Vec<String>,
    methods: Vec<PairMethodReport>,
}

pub fn pair_analysis_cmd(config: &RunConfig) -> Result<Partial> {
    let batch = run_batch(config)?;
    for e in &batch.explained {
        if e.record.pair_id.is_none() || e.record.target_index.is_none() || e.record.label.is_none() {
            bail!("record {} needs pair_id, target_index and label", e.record.id());
        }
    }
    let mut pairs: BTreeMap<&str, Vec<&Explained>> = BTreeMap::new();
    let mut order = Vec::new();
    for e in &batch.explained {
        let id = e.record.pair_id.as_deref().unwrap_or_default();
        if !pairs.contains_key(id) {
            order.push(id);
        }
        pairs.entry(id).or_default().push(e);
    }
    let kept: Vec<&str> = filtered(&batch.explained, config)?.iter().map(|e| e.record.id()).collect();
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    for id in &order {
        let mut members = pairs[id].clone();
        if members.len() != 2 || members[0].record.label == members[1].record.label {
            bail!("pair {id} needs exactly two records with different labels");
        }
        members.sort_by_key(|e| e.record.label);
        if members.iter().all(|e| kept.contains(&e.record.id())) {
            used.push((id.to_string(), members[0], members[1]));
        } else {
            dropped.push(id.to_string());
        }
    }
    if used.len() < 3 {
        bail!("{} usable pairs after filtering, need at least 3", used.len());
    }
    let (label_a, label_b) = (used[0].1.record.label.unwrap_or_default(), used[0].2.record.label.unwrap_or_default());
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| -> Result<PairMethodReport> {
            let records: Vec<PairedRelevanceRecord> = used
                .iter()
                .map(|(id, a, b)| PairedRelevanceRecord {
                    pair_id: id.clone(),
                    relevance_a: a.vectors[k].values[a.record.target_index.unwrap_or_default()],
                    relevance_b: b.vectors[k].values[b.record.target_index.unwrap_or_default()],
                    target_kind: "target".into(),
                })
                .collect();
            let side = |second: bool| -> Result<TargetSummary> {
                let items: Vec<(&RelevanceVector, usize)> = used
                    .iter()
                    .map(|p| {
                        let e = if second { p.2 } else { p.1 };
                        (&e.vectors[k], e.record.target_index.unwrap_or_default())
                    })
                    .collect();
                Ok(target_summary(&items)?)
            };
            Ok(PairMethodReport {
                method,
                correlation: paired_target_correlation(&records)?,
                group_a: PairGroup {
                    label: label_a,
                    summary: side(false)?,
                },
                group_b: PairGroup {
                    label: label_b,
                    summary: side(true)?,
                },
                pairs: records,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = create_out(config)?;
    let mut text = String::new();
    for m in &methods {
        text.push_str(&format!(
            "{}: r = {:.3} (p = {:.3}, n = {}); label {} target {:.4} vs word {:.4}; label {} target {:.4} vs word {:.4}\n",
            m.method.label(),
            m.correlation.r,
            m.correlation.p_value,
            m.correlation.n,
            m.group_a.label,
            m.group_a.summary.target_mean,
            m.group_a.summary.word_mean,
            m.group_b.label,
            m.group_b.summary.target_mean,
            m.group_b.summary.word_mean,
        ));
    }
    let body = PairBody {
        pairs_total: order.len(),
        pairs_used: used.len(),
        pairs_dropped_by_filter: dropped,
        methods,
    };
    write_json(&out.join("pair_analysis.json"), &report(config, &batch.errors, body))?;
    write_text(&out.join("pair_analysis.txt"), &text)?;
    print!("{text}");
    log_errors(out, config, &batch)
}

/// Re-renders heatmaps from an explanations file.
pub fn render_cmd(input: &Path, style: HeatmapFormat, out: Option<&Path>) -> Result<Partial> {
    let file = fs::File::open(input).with_context(|| format!("reading {}", input.display()))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| anyhow!("{} is empty", input.display()))??;
    serde_json::from_str::<Header<serde_json::Value>>(&header)
        .context("first line must hold the run configuration")?;
    let mut grouped: Vec<(TokenizedInput, Vec<RelevanceVector>)> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ExplanationLine = serde_json::from_str(&line)?;
        match grouped.last_mut() {
            Some((input, vs)) if input.id == e.input.id => vs.push(e.relevance),
            _ => grouped.push((e.input, vec![e.relevance])),
        }
    }
    if grouped.is_empty() {
        bail!("{} holds no explanations", input.display());
    }
    match style {
        HeatmapFormat::Ansi => {
            let mut stdout = std::io::stdout().lock();
            for (input, vs) in &grouped {
                writeln!(stdout, "{}", input.id)?;
                for v in vs {
                    let spec = HeatmapSpec::from_relevance(input.clone(), v)?.with_label(v.method.label());
                    writeln!(stdout, "{}", render_heatmap(&spec, HeatmapFormat::Ansi)?)?;
                }
            }
        }
        HeatmapFormat::Html => {
            let out = out.ok_or_else(|| anyhow!("--out is required for html"))?;
            fs::create_dir_all(out)?;
            let script = format!(
                "<script type=\"application/json\" class=\"olm-run-config\">{}</script>\n",
                header.trim().replace('<', "\\u003c")
            );
            for (input, vs) in &grouped {
                let mut html = script.clone();
                for v in vs {
                    let spec = HeatmapSpec::from_relevance(input.clone(), v)?.with_label(v.method.label());
                    html.push_str(&render_heatmap(&spec, HeatmapFormat::Html)?);
                    html.push('\n');
                }
                write_text(&out.join(format!("{}.html", file_stem(&input.id))), &html)?;
            }
            println!("rendered {} heatmap page(s) into {}", grouped.len(), out.display());
        }
    }
    Ok(false)
}

/// Answers wire-protocol requests on stdin/stdout with in-process models.
pub fn serve_cmd(model: Option<&str>, lm: Option<&str>) -> Result<Partial> {
    let classifier = model.map(|m| models::classifier(m, 1)).transpose()?;
    let lm = lm.map(|m| models::language_model(m, 1)).transpose()?;
    if classifier.is_none() && lm.is_none() {
        bail!("serve needs --model, --lm or both");
    }
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    protocol::serve(stdin, stdout, classifier.as_deref(), lm.as_deref())?;
    Ok(false)
}
