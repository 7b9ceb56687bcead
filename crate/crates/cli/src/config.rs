//! Run configuration: command-line flags merged over an optional key=value file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use olm_core::analysis::Aggregation;
use olm_core::explain::ExplainSettings;
use olm_core::{FillMode, Method};

pub const DEFAULT_MODEL: &str = "bundled:sentiment-bow";
pub const DEFAULT_LM: &str = "bundled:sentiment-lm";
pub const DEFAULT_SEPARATOR: &str = "[SEP]";

/// Which class neuron gets explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPolicy {
    Gold,
    Predicted,
    Index(usize),
}

impl FromStr for ClassPolicy {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gold" | "gold_label" | "gold-label" => Ok(ClassPolicy::Gold),
            "predicted" => Ok(ClassPolicy::Predicted),
            other => other
                .parse()
                .map(ClassPolicy::Index)
                .map_err(|_| anyhow!("class policy {other:?} is not gold, predicted or a class index")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Tsv,
    Jsonl,
}

impl FromStr for DatasetFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsv" => Ok(DatasetFormat::Tsv),
            "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
            other => bail!("unknown dataset format {other:?} (expected tsv or jsonl)"),
        }
    }
}

/// Flags shared by every subcommand. All are optional so that a config file
/// can fill whatever the command line leaves out.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// key=value file merged under the command-line flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// dataset file (TSV or JSON lines), or bundled:sentiment
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// dataset format: tsv or jsonl (default: from the file extension)
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// classifier: fixture path, bundled:<name>, stdio:<command> or http://url
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// masked language model, same forms as --model
    #[arg(long, global = true)]
    pub lm: Option<String>,
    /// comma-separated methods
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// replacement samples per position (default 100)
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// sample or exact
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// gold, predicted or a class index
    #[arg(long, global = true)]
    pub class_policy: Option<String>,
    /// minimum predicted probability kept by the filter (default 0.9)
    #[arg(long, global = true)]
    pub min_prob: Option<f64>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// parallel workers and backend sessions (default 4)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// unit inserted between sentence pairs (default [SEP])
    #[arg(long, global = true)]
    pub separator: Option<String>,
    /// comma-separated aggregations for stats (default avg,sum,max)
    #[arg(long, global = true)]
    pub aggregations: Option<String>,
    /// two gold labels to compare in stats, e.g. 0,1
    #[arg(long, global = true)]
    pub groups: Option<String>,
    /// axiom tolerance (default 1e-9)
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// integrated gradients steps (default 50)
    #[arg(long, global = true)]
    pub ig_steps: Option<usize>,
}

/// Fully resolved configuration, embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub dataset: Option<String>,
    pub format: Option<DatasetFormat>,
    pub model: String,
    pub lm: String,
    pub methods: Vec<Method>,
    pub class_policy: ClassPolicy,
    pub budget: usize,
    pub mode: FillMode,
    pub seed: u64,
    pub ig_steps: usize,
    pub min_prob: f64,
    pub require_correct: bool,
    pub workers: usize,
    pub separator: String,
    pub aggregations: Vec<Aggregation>,
    pub groups: Option<(usize, usize)>,
    pub tolerance: f64,
    /// Not part of the recorded configuration so reruns into another
    /// directory stay byte-identical.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn settings(&self) -> ExplainSettings {
        ExplainSettings {
            budget: self.budget,
            mode: self.mode,
            seed: self.seed,
            ig_steps: self.ig_steps,
            ..Default::default()
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
    }

    pub fn dataset_path(&self) -> Result<&str> {
        self.dataset.as_deref().ok_or_else(|| anyhow!("--dataset is required"))
    }
}

/// Reads `key = value` lines. `#` and `;` start comments, `[section]` headers
/// are ignored, and values may be quoted.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", n + 1))?;
        let key = key.trim().replace('-', "_");
        let mut value = value.trim();
        if value.len() >= 2 && (value.starts_with('"') && value.ends_with('"') || value.starts_with('\'') && value.ends_with('\'')) {
            value = &value[1..value.len() - 1];
        }
        map.insert(key, value.to_string());
    }
    Ok(map)
}

fn split_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow!("{e}")))
        .collect()
}

impl RunFlags {
    /// Fills unset flags from the config file, if any.
    fn merge_file(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        for (key, value) in parse_config_file(&text)? {
            let bad = |e: &dyn std::fmt::Display| anyhow!("config key {key}: {e}");
            match key.as_str() {
                "dataset" => fill(&mut self.dataset, value),
                "format" => fill(&mut self.format, value),
                "model" => fill(&mut self.model, value),
                "lm" => fill(&mut self.lm, value),
                "methods" => fill(&mut self.methods, value),
                "mode" => fill(&mut self.mode, value),
                "class_policy" => fill(&mut self.class_policy, value),
                "separator" => fill(&mut self.separator, value),
                "aggregations" => fill(&mut self.aggregations, value),
                "groups" => fill(&mut self.groups, value),
                "out" => fill(&mut self.out, PathBuf::from(value)),
                "budget" => fill(&mut self.budget, value.parse().map_err(|e| bad(&e))?),
                "seed" => fill(&mut self.seed, value.parse().map_err(|e| bad(&e))?),
                "workers" => fill(&mut self.workers, value.parse().map_err(|e| bad(&e))?),
                "ig_steps" => fill(&mut self.ig_steps, value.parse().map_err(|e| bad(&e))?),
                "min_prob" => fill(&mut self.min_prob, value.parse().map_err(|e| bad(&e))?),
                "tolerance" => fill(&mut self.tolerance, value.parse().map_err(|e| bad(&e))?),
                _ => bail!("unknown config key {key:?}"),
            }
        }
        Ok(self)
    }

    pub fn resolve(self, command: &str, default_methods: &[Method]) -> Result<RunConfig> {
        let f = self.merge_file()?;
        let format = match (&f.format, &f.dataset) {
            (Some(s), _) => Some(s.parse()?),
            (None, Some(d)) if d.ends_with(".jsonl") || d.ends_with(".json") => Some(DatasetFormat::Jsonl),
            (None, Some(d)) if !d.starts_with("bundled:") => Some(DatasetFormat::Tsv),
            _ => None,
        };
        let methods = match &f.methods {
            Some(s) => split_list::<Method>(s)?,
            None => default_methods.to_vec(),
        };
        if methods.is_empty() {
            bail!("at least one method is required");
        }
        let aggregations = match &f.aggregations {
            Some(s) => split_list::<Aggregation>(s)?,
            None => Aggregation::DEFAULT_SET.to_vec(),
        };
        let groups = match &f.groups {
            Some(s) => match split_list::<usize>(s)?.as_slice() {
                [a, b] if a != b => Some((*a, *b)),
                _ => bail!("--groups takes two distinct labels, e.g. 0,1"),
            },
            None => None,
        };
        let min_prob = f.min_prob.unwrap_or(0.9);
        if !(0.0..=1.0).contains(&min_prob) {
            bail!("--min-prob must lie in [0, 1]");
        }
        let workers = f.workers.unwrap_or(4);
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        let tolerance = f.tolerance.unwrap_or(1e-9);
        if tolerance.is_nan() || tolerance < 0.0 {
            bail!("--tolerance must be non-negative");
        }
        let config = RunConfig {
            command: command.to_string(),
            dataset: f.dataset,
            format,
            model: f.model.unwrap_or_else(|| DEFAULT_MODEL.into()),
            lm: f.lm.unwrap_or_else(|| DEFAULT_LM.into()),
            methods,
            class_policy: f.class_policy.as_deref().unwrap_or("gold").parse()?,
            budget: f.budget.unwrap_or(100),
            mode: f.mode.as_deref().unwrap_or("sample").parse().map_err(|e| anyhow!("{e}"))?,
            seed: f.seed.unwrap_or(0),
            ig_steps: f.ig_steps.unwrap_or(50),
            min_prob,
            require_correct: true,
            workers,
            separator: f.separator.unwrap_or_else(|| DEFAULT_SEPARATOR.into()),
            aggregations,
            groups,
            tolerance,
            out: f.out,
        };
        config.settings().occlusion(Method::Olm).validate()?;
        Ok(config)
    }
}

fn fill<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}
