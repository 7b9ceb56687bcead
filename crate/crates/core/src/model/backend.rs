//! Out-of-process backends speaking the wire protocol over subprocess stdio or HTTP.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::{Request, Response};
use super::{Classifier, ClassifierInfo, LmInfo, MaskedLm};
use crate::error::{Error, Result};
use crate::types::{FillMode, ReplacementDistribution};

/// Environment variable overriding the per-request timeout.
pub const TIMEOUT_ENV: &str = "OLM_BACKEND_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    SubprocessStdio,
    Http,
}

/// Where a backend lives: `stdio:<command line>` or an `http://` URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendEndpoint {
    pub transport: TransportKind,
    pub address: String,
}

impl BackendEndpoint {
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (transport, address) = if let Some(cmd) = spec.strip_prefix("stdio:") {
            (TransportKind::SubprocessStdio, cmd.trim())
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            (TransportKind::Http, spec)
        } else {
            return Err(Error::ConfigError(format!(
                "backend endpoint {spec:?} must start with stdio: or http://"
            )));
        };
        if address.is_empty() {
            return Err(Error::ConfigError("backend address is empty".into()));
        }
        Ok(BackendEndpoint {
            transport,
            address: address.to_string(),
        })
    }

    pub fn timeout() -> Duration {
        let ms = std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(DEFAULT_TIMEOUT_MS);
        Duration::from_millis(ms)
    }

    /// Opens the transport; `sessions` subprocesses are spawned for stdio.
    pub fn connect(&self, sessions: usize) -> Result<Arc<dyn Transport>> {
        let timeout = Self::timeout();
        Ok(match self.transport {
            TransportKind::SubprocessStdio => {
                Arc::new(StdioTransport::spawn(&self.address, sessions.max(1), timeout)?)
            }
            TransportKind::Http => Arc::new(HttpTransport::new(&self.address, timeout)),
        })
    }
}

/// Sends pipelined requests and returns responses in request order.
pub trait Transport: Send + Sync {
    fn roundtrip(&self, requests: &[Request]) -> Result<Vec<Response>>;
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A pool of backend subprocesses; each session is used serially.
pub struct StdioTransport {
    sessions: Vec<Mutex<Session>>,
    next: AtomicUsize,
    timeout: Duration,
}

impl StdioTransport {
    pub fn spawn(command_line: &str, sessions: usize, timeout: Duration) -> Result<Self> {
        let mut parts = command_line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::ConfigError("empty backend command".into()))?;
        let args: Vec<&str> = parts.collect();
        let mut pool = Vec::with_capacity(sessions);
        for _ in 0..sessions {
            let mut child = Command::new(program)
                .args(&args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::BackendError(format!("cannot start {program}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            pool.push(Mutex::new(Session {
                child,
                stdin,
                lines: rx,
            }));
        }
        Ok(StdioTransport {
            sessions: pool,
            next: AtomicUsize::new(0),
            timeout,
        })
    }

    fn session(&self) -> std::sync::MutexGuard<'_, Session> {
        let n = self.sessions.len();
        let start = self.next.fetch_add(1, Ordering::Relaxed) % n;
        for i in 0..n {
            if let Ok(guard) = self.sessions[(start + i) % n].try_lock() {
                return guard;
            }
        }
        self.sessions[start]
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl Transport for StdioTransport {
    fn roundtrip(&self, requests: &[Request]) -> Result<Vec<Response>> {
        let mut session = self.session();
        let mut payload = String::new();
        for r in requests {
            payload.push_str(&r.to_line());
            payload.push('\n');
        }
        session
            .stdin
            .write_all(payload.as_bytes())
            .and_then(|_| session.stdin.flush())
            .map_err(|e| Error::BackendError(format!("write to backend failed: {e}")))?;
        let mut out = Vec::with_capacity(requests.len());
        for r in requests {
            let line = match session.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Error::BackendError(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::BackendError(format!(
                        "backend did not answer within {:?}",
                        self.timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::BackendError("backend closed its output".into()))
                }
            };
            out.push(Response::parse(&line)?.expect_id(r.id())?);
        }
        Ok(out)
    }
}

/// POSTs newline-delimited requests; responses may come back in any order.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
}

impl HttpTransport {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport {
            agent,
            url: url.to_string(),
        }
    }
}

impl Transport for HttpTransport {
    fn roundtrip(&self, requests: &[Request]) -> Result<Vec<Response>> {
        let mut payload = String::new();
        for r in requests {
            payload.push_str(&r.to_line());
            payload.push('\n');
        }
        let body = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/x-ndjson")
            .send(payload)
            .and_then(|resp| resp.into_body().read_to_string())
            .map_err(|e| Error::BackendError(format!("HTTP request failed: {e}")))?;
        let mut by_id = HashMap::new();
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            let resp = Response::parse(line)?;
            if by_id.insert(resp.id, resp).is_some() {
                return Err(Error::ProtocolViolation("duplicate response id".into()));
            }
        }
        requests
            .iter()
            .map(|r| {
                by_id
                    .remove(&r.id())
                    .ok_or_else(|| Error::ProtocolViolation(format!("no response for id {}", r.id())))
            })
            .collect()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Classifier served by a backend.
pub struct WireClassifier {
    info: ClassifierInfo,
    transport: Arc<dyn Transport>,
}

impl WireClassifier {
    pub fn new(info: ClassifierInfo, transport: Arc<dyn Transport>) -> Self {
        WireClassifier { info, transport }
    }

    /// Learns the class count from one probe request.
    pub fn probe(name: impl Into<String>, transport: Arc<dyn Transport>, probe_units: &[String]) -> Result<Self> {
        let id = next_id();
        let resp = transport.roundtrip(&[Request::Classify {
            id,
            units: probe_units.to_vec(),
        }])?;
        let probs = resp
            .into_iter()
            .next()
            .ok_or_else(|| Error::ProtocolViolation("empty probe response".into()))?
            .into_probs()?;
        Ok(WireClassifier {
            info: ClassifierInfo::new(name, probs.len())?,
            transport,
        })
    }
}

impl Classifier for WireClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn predict(&self, units: &[String]) -> Result<Vec<f64>> {
        let mut out = self.predict_batch(&[units.to_vec()])?;
        Ok(out.remove(0))
    }

    fn predict_batch(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let requests: Vec<Request> = batch
            .iter()
            .map(|units| Request::Classify {
                id: next_id(),
                units: units.clone(),
            })
            .collect();
        self.transport
            .roundtrip(&requests)?
            .into_iter()
            .map(|r| {
                let probs = r.into_probs()?;
                if !super::is_normalized(&probs) {
                    return Err(Error::ProtocolViolation(format!(
                        "backend probabilities sum to {}",
                        probs.iter().sum::<f64>()
                    )));
                }
                Ok(probs)
            })
            .collect()
    }
}

/// Masked language model served by a backend.
pub struct WireMaskedLm {
    info: LmInfo,
    transport: Arc<dyn Transport>,
}

impl WireMaskedLm {
    pub fn new(info: LmInfo, transport: Arc<dyn Transport>) -> Self {
        WireMaskedLm { info, transport }
    }
}

impl MaskedLm for WireMaskedLm {
    fn info(&self) -> &LmInfo {
        &self.info
    }

    fn fill_mask_units(
        &self,
        units: &[String],
        position: usize,
        budget: usize,
        mode: FillMode,
        seed: u64,
    ) -> Result<ReplacementDistribution> {
        let request = Request::FillMask {
            id: next_id(),
            units: units.to_vec(),
            mask_index: position,
            budget,
            mode,
            seed,
        };
        self.transport
            .roundtrip(&[request])?
            .remove(0)
            .into_distribution(position)
    }
}
