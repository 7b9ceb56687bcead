//! Executable relevance axioms over (method, model, inputs).
//!
//! Every check is deterministic given the seed in [`ExplainSettings`] and
//! reports the largest deviation it saw, so tolerances can be tracked over
//! time rather than just passed or failed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain, explain_all_classes, ExplainSettings};
use crate::model::{classify, evaluate_batch, fill_mask, Classifier, MaskedLm};
use crate::occlusion::{derive_seed, PredictionCache};
use crate::toy::fixture::BundledFixture;
use crate::toy::linear_combination_classifier;
use crate::types::{Method, RelevanceVector, TokenizedInput};

/// Largest output difference two models may show on the probe set and still
/// count as the same function.
pub const PROBE_TOLERANCE: f64 = 1e-9;

const MAX_WITNESSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    ClassZeroSum,
    Completeness,
    ImplementationInvariance,
    #[serde(rename = "sensitivity_1")]
    Sensitivity1,
    Linearity,
}

impl Axiom {
    pub const ALL: [Axiom; 5] = [
        Axiom::ClassZeroSum,
        Axiom::Completeness,
        Axiom::ImplementationInvariance,
        Axiom::Sensitivity1,
        Axiom::Linearity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axiom::ClassZeroSum => "class_zero_sum",
            Axiom::Completeness => "completeness",
            Axiom::ImplementationInvariance => "implementation_invariance",
            Axiom::Sensitivity1 => "sensitivity_1",
            Axiom::Linearity => "linearity",
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axiom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Axiom::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::ConfigError(format!("unknown axiom {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub input_id: String,
    /// `None` for input-level identities such as completeness.
    pub position: Option<usize>,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: Axiom,
    pub method: String,
    pub verdict: Verdict,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub inputs_checked: usize,
    /// The largest deviations above tolerance.
    pub witnesses: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AxiomReport {
    fn not_applicable(axiom: Axiom, method: Method, tolerance: f64, note: impl Into<String>) -> Self {
        AxiomReport {
            axiom,
            method: method.name().to_string(),
            verdict: Verdict::NotApplicable,
            max_deviation: 0.0,
            tolerance,
            inputs_checked: 0,
            witnesses: Vec::new(),
            note: Some(note.into()),
        }
    }

    fn from_deviations(axiom: Axiom, method: Method, tolerance: f64, inputs: usize, deviations: Vec<Witness>) -> Self {
        let max_deviation = deviations.iter().fold(0.0, |m: f64, w| m.max(w.deviation));
        let mut witnesses: Vec<Witness> = deviations.into_iter().filter(|w| w.deviation > tolerance).collect();
        witnesses.sort_by(|a, b| b.deviation.total_cmp(&a.deviation));
        witnesses.truncate(MAX_WITNESSES);
        AxiomReport {
            axiom,
            method: method.name().to_string(),
            verdict: if max_deviation <= tolerance {
                Verdict::Satisfied
            } else {
                Verdict::Violated
            },
            max_deviation,
            tolerance,
            inputs_checked: inputs,
            witnesses,
            note: None,
        }
    }
}

/// Language model and method settings shared by both sides of an identity.
#[derive(Clone, Copy)]
pub struct AxiomContext<'a> {
    pub lm: Option<&'a dyn MaskedLm>,
    pub settings: &'a ExplainSettings,
}

/// Gold label when present, else the predicted class.
pub fn target_class(model: &dyn Classifier, input: &TokenizedInput) -> Result<usize> {
    match input.gold_label {
        Some(c) if c < model.info().class_count => Ok(c),
        _ => Ok(classify(model, input)?.argmax().0),
    }
}

/// Turns a missing capability into a not-applicable report.
fn guarded(axiom: Axiom, method: Method, tolerance: f64, run: impl FnOnce() -> Result<AxiomReport>) -> Result<AxiomReport> {
    match run() {
        Err(e) => match e.root() {
            Error::CapabilityError(msg) => Ok(AxiomReport::not_applicable(axiom, method, tolerance, msg.clone())),
            _ => Err(e),
        },
        ok => ok,
    }
}

fn per_unit(input_id: &str, deviations: impl IntoIterator<Item = f64>) -> Vec<Witness> {
    deviations
        .into_iter()
        .enumerate()
        .map(|(i, d)| Witness {
            input_id: input_id.to_string(),
            position: Some(i),
            deviation: d,
        })
        .collect()
}

fn collect_inputs(
    inputs: &[TokenizedInput],
    f: impl Fn(&TokenizedInput) -> Result<Vec<Witness>> + Sync,
) -> Result<Vec<Witness>> {
    Ok(inputs
        .par_iter()
        .map(&f)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// max over units of |Σ_c r_c(x_i)|.
pub fn check_class_zero_sum(
    method: Method,
    model: &dyn Classifier,
    inputs: &[TokenizedInput],
    ctx: AxiomContext<'_>,
    tolerance: f64,
) -> Result<AxiomReport> {
    let axiom = Axiom::ClassZeroSum;
    if !model.is_normalized() {
        return Ok(AxiomReport::not_applicable(
            axiom,
            method,
            tolerance,
            "model outputs are not probability distributions",
        ));
    }
    guarded(axiom, method, tolerance, || {
        let classes: Vec<usize> = (0..model.info().class_count).collect();
        let devs = collect_inputs(inputs, |x| {
            let vectors = explain_all_classes(model, ctx.lm, x, method, &classes, ctx.settings, &PredictionCache::new())?;
            let sums = (0..x.len()).map(|i| vectors.iter().map(|v| v.values[i]).sum::<f64>().abs());
            Ok(per_unit(&x.id, sums))
        })?;
        Ok(AxiomReport::from_deviations(axiom, method, tolerance, inputs.len(), devs))
    })
}

/// max over inputs of |Σ_i r_c(x_i) − f_c(x)|.
pub fn check_completeness(
    method: Method,
    model: &dyn Classifier,
    inputs: &[TokenizedInput],
    ctx: AxiomContext<'_>,
    tolerance: f64,
) -> Result<AxiomReport> {
    let axiom = Axiom::Completeness;
    guarded(axiom, method, tolerance, || {
        let devs = collect_inputs(inputs, |x| {
            let class = target_class(model, x)?;
            let r = explain(model, ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
            let total: f64 = r.feature_values().iter().sum();
            Ok(vec![Witness {
                input_id: x.id.clone(),
                position: None,
                deviation: (total - r.meta.original_prediction).abs(),
            }])
        })?;
        Ok(AxiomReport::from_deviations(axiom, method, tolerance, inputs.len(), devs))
    })
}

fn probe_set(inputs: &[TokenizedInput]) -> Vec<Vec<String>> {
    let mut probes = Vec::new();
    for x in inputs {
        let units = x.surfaces();
        if units.len() > 1 {
            for i in 0..units.len() {
                let mut v = units.clone();
                v.remove(i);
                probes.push(v);
            }
        }
        probes.push(units);
    }
    probes
}

/// Largest output difference between two models over the inputs and their
/// single-deletion variants.
pub fn functional_difference(a: &dyn Classifier, b: &dyn Classifier, inputs: &[TokenizedInput]) -> Result<f64> {
    if a.info().class_count != b.info().class_count {
        return Ok(f64::INFINITY);
    }
    let probes = probe_set(inputs);
    let oa = evaluate_batch(a, &probes)?;
    let ob = evaluate_batch(b, &probes)?;
    Ok(oa
        .iter()
        .zip(&ob)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max))
}

/// Relevances of two functionally equal models must agree.
pub fn check_implementation_invariance(
    method: Method,
    model_a: &dyn Classifier,
    model_b: &dyn Classifier,
    inputs: &[TokenizedInput],
    ctx: AxiomContext<'_>,
    tolerance: f64,
) -> Result<AxiomReport> {
    let axiom = Axiom::ImplementationInvariance;
    let diff = functional_difference(model_a, model_b, inputs)?;
    if diff.is_nan() || diff >= PROBE_TOLERANCE {
        return Err(Error::PreconditionFailed(format!(
            "models {} and {} differ by {diff:e} on the probe set",
            model_a.info().name,
            model_b.info().name
        )));
    }
    guarded(axiom, method, tolerance, || {
        let devs = collect_inputs(inputs, |x| {
            let class = target_class(model_a, x)?;
            let ra = explain(model_a, ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
            let rb = explain(model_b, ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
            Ok(per_unit(&x.id, ra.values.iter().zip(&rb.values).map(|(a, b)| (a - b).abs())))
        })?;
        Ok(AxiomReport::from_deviations(axiom, method, tolerance, inputs.len(), devs))
    })
}

fn with_unit(units: &[String], position: usize, token: Option<&str>) -> Vec<String> {
    let mut v = units.to_vec();
    match token {
        Some(t) => v[position] = t.to_string(),
        None => {
            v.remove(position);
        }
    }
    v
}

/// f_c(x) minus the expected f_c with unit `position` removed, computed
/// directly from the model without the engine's traces or cache.
fn reference_difference(
    method: Method,
    model: &dyn Classifier,
    input: &TokenizedInput,
    position: usize,
    class: usize,
    ctx: AxiomContext<'_>,
    seed: u64,
) -> Result<f64> {
    let units = input.surfaces();
    let original = evaluate_batch(model, std::slice::from_ref(&units))?[0][class];
    let removed = match method {
        Method::Delete => evaluate_batch(model, &[with_unit(&units, position, None)])?[0][class],
        Method::Unk => evaluate_batch(model, &[with_unit(&units, position, Some(&ctx.settings.unk_token))])?[0][class],
        Method::Olm => {
            let lm = ctx
                .lm
                .ok_or_else(|| Error::ConfigError("OLM needs a language model".into()))?;
            let dist = fill_mask(
                lm,
                input,
                position,
                ctx.settings.budget,
                ctx.settings.mode,
                derive_seed(seed, &input.id, position),
            )?;
            let batch: Vec<Vec<String>> = dist
                .candidates
                .iter()
                .map(|c| with_unit(&units, position, Some(&c.token)))
                .collect();
            let outs = evaluate_batch(model, &batch)?;
            let total = dist.total_weight();
            dist.candidates
                .iter()
                .zip(&outs)
                .map(|(c, o)| c.weight / total * o[class])
                .sum()
        }
        _ => unreachable!("checked by caller"),
    };
    Ok(original - removed)
}

/// Relevance equals the prediction difference when the unit is removed.
/// `reference_seed` resamples the right-hand side with a different seed,
/// which breaks the shared-trace requirement on purpose.
pub fn check_sensitivity_1(
    method: Method,
    model: &dyn Classifier,
    inputs: &[TokenizedInput],
    ctx: AxiomContext<'_>,
    tolerance: f64,
    reference_seed: Option<u64>,
) -> Result<AxiomReport> {
    let axiom = Axiom::Sensitivity1;
    if !matches!(method, Method::Olm | Method::Delete | Method::Unk) {
        return Ok(AxiomReport::not_applicable(
            axiom,
            method,
            tolerance,
            "defined for occlusion methods only",
        ));
    }
    let seed = reference_seed.unwrap_or(ctx.settings.seed);
    guarded(axiom, method, tolerance, || {
        let devs = collect_inputs(inputs, |x| {
            let class = target_class(model, x)?;
            let r = explain(model, ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
            let devs = (0..x.len())
                .map(|i| Ok((r.values[i] - reference_difference(method, model, x, i, class, ctx, seed)?).abs()))
                .collect::<Result<Vec<_>>>()?;
            Ok(per_unit(&x.id, devs))
        })?;
        Ok(AxiomReport::from_deviations(axiom, method, tolerance, inputs.len(), devs))
    })
}

/// Relevance of Σ α_j g_j equals Σ α_j times the relevance of g_j.
pub fn check_linearity(
    method: Method,
    members: &[Arc<dyn Classifier>],
    coefficients: &[f64],
    inputs: &[TokenizedInput],
    ctx: AxiomContext<'_>,
    tolerance: f64,
) -> Result<AxiomReport> {
    let axiom = Axiom::Linearity;
    if members.len() != coefficients.len() || members.is_empty() {
        return Err(Error::ConfigError(format!(
            "{} members for {} coefficients",
            members.len(),
            coefficients.len()
        )));
    }
    let combined = linear_combination_classifier(
        coefficients.iter().copied().zip(members.iter().cloned()).collect(),
    )?;
    guarded(axiom, method, tolerance, || {
        let devs = collect_inputs(inputs, |x| {
            let class = target_class(members[0].as_ref(), x)?;
            let whole = explain(&combined, ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
            let mut sum = vec![0.0; x.len()];
            for (a, m) in coefficients.iter().zip(members) {
                let r: RelevanceVector = explain(m.as_ref(), ctx.lm, x, method, class, ctx.settings, &PredictionCache::new())?;
                for (s, v) in sum.iter_mut().zip(&r.values) {
                    *s += a * v;
                }
            }
            Ok(per_unit(&x.id, whole.values.iter().zip(&sum).map(|(w, s)| (w - s).abs())))
        })?;
        Ok(AxiomReport::from_deviations(axiom, method, tolerance, inputs.len(), devs))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub methods: Vec<Method>,
    pub axioms: Vec<Axiom>,
    pub settings: ExplainSettings,
    pub tolerance: f64,
    pub linearity_coefficients: (f64, f64),
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            methods: Method::ALL.to_vec(),
            axioms: Axiom::ALL.to_vec(),
            settings: ExplainSettings::default(),
            tolerance: 1e-9,
            linearity_coefficients: (0.3, 0.7),
        }
    }
}

pub fn check_fixture(axiom: Axiom, method: Method, fixture: &BundledFixture, options: &SuiteOptions) -> Result<AxiomReport> {
    let ctx = AxiomContext {
        lm: Some(fixture.lm.as_ref()),
        settings: &options.settings,
    };
    let (model, inputs, tol) = (fixture.classifier.as_ref(), &fixture.inputs[..], options.tolerance);
    match axiom {
        Axiom::ClassZeroSum => check_class_zero_sum(method, model, inputs, ctx, tol),
        Axiom::Completeness => check_completeness(method, model, inputs, ctx, tol),
        Axiom::ImplementationInvariance => {
            check_implementation_invariance(method, model, fixture.twin.as_ref(), inputs, ctx, tol)
        }
        Axiom::Sensitivity1 => check_sensitivity_1(method, model, inputs, ctx, tol, None),
        Axiom::Linearity => {
            let (a, b) = options.linearity_coefficients;
            check_linearity(
                method,
                &[fixture.classifier.clone(), fixture.partner.clone()],
                &[a, b],
                inputs,
                ctx,
                tol,
            )
        }
    }
}

/// Combines per-fixture reports of one (axiom, method) cell. Witness ids are
/// prefixed with the fixture name.
pub fn merge_reports(parts: Vec<(String, AxiomReport)>) -> Option<AxiomReport> {
    let mut iter = parts.into_iter();
    let (first_name, mut merged) = iter.next()?;
    let prefix = |name: &str, ws: Vec<Witness>| -> Vec<Witness> {
        ws.into_iter()
            .map(|w| Witness {
                input_id: format!("{name}/{}", w.input_id),
                ..w
            })
            .collect()
    };
    merged.witnesses = prefix(&first_name, std::mem::take(&mut merged.witnesses));
    let mut notes: Vec<String> = merged.note.take().into_iter().map(|n| format!("{first_name}: {n}")).collect();
    for (name, r) in iter {
        merged.verdict = match (merged.verdict, r.verdict) {
            (Verdict::Violated, _) | (_, Verdict::Violated) => Verdict::Violated,
            (Verdict::NotApplicable, v) => v,
            (v, _) => v,
        };
        merged.max_deviation = merged.max_deviation.max(r.max_deviation);
        merged.inputs_checked += r.inputs_checked;
        merged.witnesses.extend(prefix(&name, r.witnesses));
        if let Some(n) = r.note {
            notes.push(format!("{name}: {n}"));
        }
    }
    merged.witnesses.sort_by(|a, b| b.deviation.total_cmp(&a.deviation));
    merged.witnesses.truncate(MAX_WITNESSES);
    merged.note = (!notes.is_empty()).then(|| notes.join("; "));
    Some(merged)
}

/// Every requested (axiom, method) cell across all fixtures, in request order.
pub fn run_suite(fixtures: &[BundledFixture], options: &SuiteOptions) -> Result<Vec<AxiomReport>> {
    let cells: Vec<(Axiom, Method)> = options
        .methods
        .iter()
        .flat_map(|&m| options.axioms.iter().map(move |&a| (a, m)))
        .collect();
    cells
        .par_iter()
        .map(|&(axiom, method)| {
            let parts = fixtures
                .iter()
                .map(|f| Ok((f.name.clone(), check_fixture(axiom, method, f, options)?)))
                .collect::<Result<Vec<_>>>()?;
            merge_reports(parts).ok_or_else(|| Error::InsufficientData("no fixtures to check".into()))
        })
        .collect()
}
