//! Dataset ingestion from GLUE-style TSV or JSON lines.

use std::collections::HashSet;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use olm_core::toy::fixture::sentiment_dataset;
use olm_core::{tokenize, TokenizedInput};

use crate::config::DatasetFormat;

/// One row as written in the dataset file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(alias = "text", alias = "text_a")]
    pub sentence: String,
    #[serde(default, alias = "text_b")]
    pub sentence_b: Option<String>,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub target_index: Option<usize>,
}

/// A record tokenized for explanation.
#[derive(Debug, Clone)]
pub struct Record {
    pub input: TokenizedInput,
    pub label: Option<usize>,
    pub pair_id: Option<String>,
    pub target_index: Option<usize>,
    /// Position of the separator unit for sentence pairs.
    pub separator_position: Option<usize>,
}

impl Record {
    pub fn id(&self) -> &str {
        &self.input.id
    }

    pub fn excluded(&self) -> Vec<usize> {
        self.separator_position.into_iter().collect()
    }
}

fn parse_tsv(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| anyhow!("dataset is empty"))?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name);
    let id = col("id").ok_or_else(|| anyhow!("TSV header has no id column"))?;
    let sentence = col("sentence").ok_or_else(|| anyhow!("TSV header has no sentence column"))?;
    let (sentence_b, label, pair_id, target) = (col("sentence_b"), col("label"), col("pair_id"), col("target_index"));
    lines
        .map(|(n, line)| {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != columns.len() {
                bail!("TSV line {}: {} cells for {} columns", n + 1, cells.len(), columns.len());
            }
            let optional = |c: Option<usize>| c.map(|i| cells[i].trim()).filter(|s| !s.is_empty());
            let number = |c: Option<usize>, what: &str| -> Result<Option<usize>> {
                optional(c)
                    .map(|s| s.parse().with_context(|| format!("TSV line {}: bad {what} {s:?}", n + 1)))
                    .transpose()
            };
            Ok(DatasetRecord {
                id: cells[id].trim().to_string(),
                sentence: cells[sentence].to_string(),
                sentence_b: optional(sentence_b).map(str::to_string),
                label: number(label, "label")?,
                pair_id: optional(pair_id).map(str::to_string),
                target_index: number(target, "target_index")?,
            })
        })
        .collect()
}

fn parse_jsonl(text: &str) -> Result<Vec<DatasetRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("JSON line {}", n + 1)))
        .collect()
}

/// Tokenizes rows, joining sentence pairs around `separator`.
pub fn build_records(rows: Vec<DatasetRecord>, separator: &str) -> Result<Vec<Record>> {
    if rows.is_empty() {
        bail!("dataset has no records");
    }
    let mut seen = HashSet::new();
    rows.into_iter()
        .map(|row| {
            if row.id.is_empty() {
                bail!("record with an empty id");
            }
            if !seen.insert(row.id.clone()) {
                bail!("duplicate record id {:?}", row.id);
            }
            let a = tokenize(&row.sentence).with_context(|| format!("record {}", row.id))?;
            if let Some(t) = row.target_index {
                if t >= a.len() {
                    bail!("record {}: target_index {t} outside its {} units", row.id, a.len());
                }
            }
            let (mut input, separator_position) = match &row.sentence_b {
                None => (a, None),
                Some(b) => {
                    let b = tokenize(b).with_context(|| format!("record {}", row.id))?;
                    let mut surfaces = a.surfaces();
                    let position = surfaces.len();
                    surfaces.push(separator.to_string());
                    surfaces.extend(b.surfaces());
                    (TokenizedInput::from_surfaces(row.id.clone(), &surfaces)?, Some(position))
                }
            };
            input.id = row.id;
            input.gold_label = row.label;
            Ok(Record {
                input,
                label: row.label,
                pair_id: row.pair_id,
                target_index: row.target_index,
                separator_position,
            })
        })
        .collect()
}

pub fn load(path: &str, format: Option<DatasetFormat>, separator: &str) -> Result<Vec<Record>> {
    if path == "bundled:sentiment" {
        return Ok(sentiment_dataset()
            .into_iter()
            .map(|input| Record {
                label: input.gold_label,
                input,
                pair_id: None,
                target_index: None,
                separator_position: None,
            })
            .collect());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading dataset {path}"))?;
    let rows = match format.unwrap_or(DatasetFormat::Tsv) {
        DatasetFormat::Tsv => parse_tsv(&text)?,
        DatasetFormat::Jsonl => parse_jsonl(&text)?,
    };
    build_records(rows, separator)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_and_jsonl_agree() {
        let tsv = "id\tsentence\tlabel\tpair_id\ttarget_index\na\tshe laughed .\t1\tp1\t1\nb\tshe laughed the dog .\t0\tp1\t1\n";
        let jsonl = "{\"id\":\"a\",\"sentence\":\"she laughed .\",\"label\":1,\"pair_id\":\"p1\",\"target_index\":1}\n\
                     {\"id\":\"b\",\"text\":\"she laughed the dog .\",\"label\":0,\"pair_id\":\"p1\",\"target_index\":1}\n";
        assert_eq!(parse_tsv(tsv).unwrap(), parse_jsonl(jsonl).unwrap());
    }

    #[test]
    fn pairs_join_around_the_separator() {
        let rows = parse_tsv("id\tsentence\tsentence_b\tlabel\nx\ta cat .\tno cat\t2\n").unwrap();
        let r = build_records(rows, "[SEP]").unwrap().remove(0);
        assert_eq!(r.input.surfaces(), ["a", "cat", ".", "[SEP]", "no", "cat"]);
        assert_eq!(r.separator_position, Some(3));
        assert_eq!(r.input.gold_label, Some(2));
    }

    #[test]
    fn invalid_rows_are_rejected() {
        assert!(parse_tsv("").is_err());
        assert!(parse_tsv("id\tlabel\nx\t1\n").is_err());
        assert!(parse_tsv("id\tsentence\tlabel\nx\tgood\tyes\n").is_err());
        let dup = parse_tsv("id\tsentence\nx\tgood\nx\tbad\n").unwrap();
        assert!(build_records(dup, "|").is_err());
        let far = parse_tsv("id\tsentence\ttarget_index\nx\tgood\t3\n").unwrap();
        assert!(build_records(far, "|").is_err());
        assert!(build_records(Vec::new(), "|").is_err());
    }
}
