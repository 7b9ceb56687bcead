//! Newline-delimited JSON wire protocol between the engine and model backends.
//!
//! ```text
//! {"op":"classify","id":1,"units":["good","film"]}
//! {"id":1,"probs":[0.02,0.98]}
//! {"op":"fill_mask","id":2,"units":["good","film"],"mask_index":1,"budget":100,"mode":"sample","seed":7}
//! {"id":2,"candidates":[{"token":"movie","weight":60},{"token":"film","weight":40}],"kind":"empirical_counts"}
//! {"id":3,"error":"model not loaded"}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Classifier, MaskedLm};
use crate::error::{Error, Result};
use crate::types::{Candidate, DistributionKind, FillMode, ReplacementDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Classify {
        id: u64,
        units: Vec<String>,
    },
    FillMask {
        id: u64,
        units: Vec<String>,
        mask_index: usize,
        budget: usize,
        mode: FillMode,
        seed: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Classify { id, .. } | Request::FillMask { id, .. } => *id,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Probs(Vec<f64>),
    Candidates {
        candidates: Vec<Candidate>,
        kind: DistributionKind,
    },
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub id: u64,
    pub body: ResponseBody,
}

/// Flat mirror of every response shape; unknown keys (e.g. backend metadata) are ignored.
#[derive(Serialize, Deserialize)]
struct RawResponse {
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<Candidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<DistributionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl Response {
    /// Strictly parses one response line.
    pub fn parse(line: &str) -> Result<Response> {
        let raw: RawResponse = serde_json::from_str(line.trim())
            .map_err(|e| Error::ProtocolViolation(format!("malformed response: {e}")))?;
        let id = raw
            .id
            .ok_or_else(|| Error::ProtocolViolation("response without id".into()))?;
        let body = match (raw.probs, raw.candidates, raw.kind, raw.error) {
            (Some(p), None, None, None) => ResponseBody::Probs(p),
            (None, Some(candidates), Some(kind), None) => ResponseBody::Candidates { candidates, kind },
            (None, None, None, Some(e)) => ResponseBody::Error(e),
            (None, Some(_), None, None) => {
                return Err(Error::ProtocolViolation("candidates without kind".into()))
            }
            _ => {
                return Err(Error::ProtocolViolation(
                    "response must carry exactly one of probs, candidates or error".into(),
                ))
            }
        };
        Ok(Response { id, body })
    }

    pub fn to_line(&self) -> String {
        let mut raw = RawResponse {
            id: Some(self.id),
            probs: None,
            candidates: None,
            kind: None,
            error: None,
        };
        match &self.body {
            ResponseBody::Probs(p) => raw.probs = Some(p.clone()),
            ResponseBody::Candidates { candidates, kind } => {
                raw.candidates = Some(candidates.clone());
                raw.kind = Some(*kind);
            }
            ResponseBody::Error(e) => raw.error = Some(e.clone()),
        }
        serde_json::to_string(&raw).expect("responses always serialize")
    }

    pub(crate) fn expect_id(self, id: u64) -> Result<Response> {
        if self.id != id {
            return Err(Error::ProtocolViolation(format!(
                "response id {} does not match request id {id}",
                self.id
            )));
        }
        Ok(self)
    }

    pub(crate) fn into_probs(self) -> Result<Vec<f64>> {
        match self.body {
            ResponseBody::Probs(p) => Ok(p),
            ResponseBody::Error(e) => Err(Error::BackendError(e)),
            ResponseBody::Candidates { .. } => Err(Error::ProtocolViolation(
                "expected probs, got candidates".into(),
            )),
        }
    }

    pub(crate) fn into_distribution(self, position: usize) -> Result<ReplacementDistribution> {
        match self.body {
            ResponseBody::Candidates { candidates, kind } => Ok(ReplacementDistribution {
                position,
                candidates,
                kind,
            }),
            ResponseBody::Error(e) => Err(Error::BackendError(e)),
            ResponseBody::Probs(_) => Err(Error::ProtocolViolation(
                "expected candidates, got probs".into(),
            )),
        }
    }
}

/// Answers one request line using in-process models.
pub fn handle_line(
    line: &str,
    classifier: Option<&dyn Classifier>,
    lm: Option<&dyn MaskedLm>,
) -> Response {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(Value::as_u64))
                .unwrap_or(0);
            return Response {
                id,
                body: ResponseBody::Error(format!("malformed request: {e}")),
            };
        }
    };
    let id = request.id();
    let body = match request {
        Request::Classify { units, .. } => match classifier {
            None => ResponseBody::Error("no classifier loaded".into()),
            Some(model) => match super::evaluate(model, &units) {
                Ok(p) => ResponseBody::Probs(p),
                Err(e) => ResponseBody::Error(e.to_string()),
            },
        },
        Request::FillMask {
            units,
            mask_index,
            budget,
            mode,
            seed,
            ..
        } => match lm {
            None => ResponseBody::Error("no language model loaded".into()),
            Some(lm) => match super::fill_mask_surfaces(lm, &units, mask_index, budget, mode, seed) {
                Ok(d) => ResponseBody::Candidates {
                    candidates: d.candidates,
                    kind: d.kind,
                },
                Err(e) => ResponseBody::Error(e.to_string()),
            },
        },
    };
    Response { id, body }
}

/// Serves requests line by line until the reader is exhausted.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    classifier: Option<&dyn Classifier>,
    lm: Option<&dyn MaskedLm>,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(&line, classifier, lm);
        writeln!(writer, "{}", response.to_line())?;
        writer.flush()?;
    }
    Ok(())
}
