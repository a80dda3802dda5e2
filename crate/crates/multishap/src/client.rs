//! Scorer endpoints and the memoizing protocol client.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use multishap_core::{Coalition, ScoreError, Scorer};

use crate::error::{Error, Result};
use crate::protocol::{to_line, Meta, Reply, ScoreRequest};

/// Where scores come from: `cmd:<shell command>`, `http:<url>`, or
/// `synthetic:<game>` for the built-in in-process games.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointSpec {
    Command(String),
    Http(String),
    Synthetic(String),
}

impl FromStr for EndpointSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(EndpointSpec::Http(s.trim_end_matches('/').to_string()));
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::usage(format!("scorer `{s}` must start with cmd:, http: or synthetic:")))?;
        if rest.is_empty() {
            return Err(Error::usage(format!("scorer `{s}` has an empty target")));
        }
        match kind {
            "cmd" => Ok(EndpointSpec::Command(rest.to_string())),
            "http" | "https" => {
                let url = if rest.starts_with("//") {
                    format!("{kind}:{rest}")
                } else if rest.contains("://") {
                    rest.to_string()
                } else {
                    format!("{kind}://{rest}")
                };
                Ok(EndpointSpec::Http(url.trim_end_matches('/').to_string()))
            }
            "synthetic" => Ok(EndpointSpec::Synthetic(rest.to_string())),
            _ => Err(Error::usage(format!("unknown scorer kind `{kind}`"))),
        }
    }
}

impl std::fmt::Display for EndpointSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EndpointSpec::Command(c) => write!(f, "cmd:{c}"),
            EndpointSpec::Http(u) => f.write_str(u),
            EndpointSpec::Synthetic(g) => write!(f, "synthetic:{g}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub timeout: Duration,
    /// Maximum coalitions per wire request.
    pub max_batch: usize,
    /// Maximum requests outstanding at once.
    pub max_in_flight: usize,
    /// Remember scores across calls, keyed by sample and coalition.
    pub memoize: bool,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(60), max_batch: 64, max_in_flight: 1, memoize: true }
    }
}

/// A connected scorer that has completed its handshake.
pub trait Endpoint: Send {
    fn meta(&self) -> &Meta;

    /// Sends every request and returns the replies in request order.
    fn exchange(&mut self, requests: &[ScoreRequest]) -> Result<Vec<Reply>>;
}

/// Scorer process speaking JSON lines over its standard streams.
pub struct SubprocessEndpoint {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    meta: Meta,
    timeout: Duration,
    max_in_flight: usize,
}

impl SubprocessEndpoint {
    pub fn spawn(command: &str, options: &ClientOptions) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut endpoint = Self {
            child,
            stdin,
            lines: rx,
            meta: Meta { v: 0, m: 0, n: 0, task: crate::protocol::Task::Other, deterministic: false, sample_ids: None },
            timeout: options.timeout,
            max_in_flight: options.max_in_flight.max(1),
        };
        let first = endpoint.read_line()?;
        endpoint.meta = Meta::parse(&first)?;
        Ok(endpoint)
    }

    fn read_line(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Transport(format!("reading scorer output: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("scorer closed its output".into())),
        }
    }
}

impl Endpoint for SubprocessEndpoint {
    fn meta(&self) -> &Meta {
        &self.meta
    }

    fn exchange(&mut self, requests: &[ScoreRequest]) -> Result<Vec<Reply>> {
        let mut out = Vec::with_capacity(requests.len());
        for window in requests.chunks(self.max_in_flight) {
            for req in window {
                self.stdin
                    .write_all(to_line(req)?.as_bytes())
                    .map_err(|e| Error::Transport(format!("writing request: {e}")))?;
            }
            self.stdin.flush().map_err(|e| Error::Transport(format!("writing request: {e}")))?;
            let mut pending: HashMap<u64, Reply> = HashMap::new();
            while pending.len() < window.len() {
                let line = self.read_line()?;
                if line.trim().is_empty() {
                    continue;
                }
                let reply = Reply::parse(&line)?;
                if !window.iter().any(|r| r.id == reply.id()) || pending.contains_key(&reply.id()) {
                    return Err(Error::Protocol(format!("unexpected reply id {}", reply.id())));
                }
                pending.insert(reply.id(), reply);
            }
            out.extend(window.iter().map(|r| pending.remove(&r.id).expect("collected")));
        }
        Ok(out)
    }
}

impl Drop for SubprocessEndpoint {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Remote scorer behind `GET /meta` and `POST /score`.
pub struct HttpEndpoint {
    agent: ureq::Agent,
    base: String,
    meta: Meta,
    timeout: Duration,
    max_in_flight: usize,
}

impl HttpEndpoint {
    pub fn connect(base: &str, options: &ClientOptions) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base.trim_end_matches('/').to_string();
        let body = get_text(&agent, &format!("{base}/meta"), options.timeout)?;
        let meta = Meta::parse(&body)?;
        Ok(Self { agent, base, meta, timeout: options.timeout, max_in_flight: options.max_in_flight.max(1) })
    }

    fn post(&self, req: &ScoreRequest) -> Result<Reply> {
        let body = serde_json::to_string(req)?;
        let mut resp = self
            .agent
            .post(&format!("{}/score", self.base))
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| transport_error(e, self.timeout))?;
        let text = resp.body_mut().read_to_string().map_err(|e| transport_error(e, self.timeout))?;
        Reply::parse(&text)
    }
}

fn get_text(agent: &ureq::Agent, url: &str, timeout: Duration) -> Result<String> {
    let mut resp = agent.get(url).call().map_err(|e| transport_error(e, timeout))?;
    if !resp.status().is_success() {
        return Err(Error::Transport(format!("GET {url}: HTTP {}", resp.status())));
    }
    resp.body_mut().read_to_string().map_err(|e| transport_error(e, timeout))
}

fn transport_error(e: ureq::Error, timeout: Duration) -> Error {
    match e {
        ureq::Error::Timeout(_) => Error::Timeout(timeout.as_millis() as u64),
        other => Error::Transport(other.to_string()),
    }
}

impl Endpoint for HttpEndpoint {
    fn meta(&self) -> &Meta {
        &self.meta
    }

    fn exchange(&mut self, requests: &[ScoreRequest]) -> Result<Vec<Reply>> {
        let mut out = Vec::with_capacity(requests.len());
        for window in requests.chunks(self.max_in_flight) {
            let this = &*self;
            let replies: Vec<Result<Reply>> = thread::scope(|scope| {
                let handles: Vec<_> = window.iter().map(|req| scope.spawn(move || this.post(req))).collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            for (req, reply) in window.iter().zip(replies) {
                let reply = reply?;
                if reply.id() != req.id {
                    return Err(Error::Protocol(format!("reply id {} does not echo request id {}", reply.id(), req.id)));
                }
                out.push(reply);
            }
        }
        Ok(out)
    }
}

/// Spawns or connects to an external scorer and performs the handshake.
pub fn connect(spec: &EndpointSpec, options: &ClientOptions) -> Result<Box<dyn Endpoint>> {
    match spec {
        EndpointSpec::Command(cmd) => Ok(Box::new(SubprocessEndpoint::spawn(cmd, options)?)),
        EndpointSpec::Http(url) => Ok(Box::new(HttpEndpoint::connect(url, options)?)),
        EndpointSpec::Synthetic(_) => {
            Err(Error::usage("synthetic scorers run in-process and have no wire endpoint"))
        }
    }
}

/// [`Scorer`] over a wire endpoint for one sample.
///
/// Identical coalitions are sent at most once per sample: duplicates within
/// a batch collapse before dispatch and, with memoization on, scores are
/// reused across batches.
pub struct ProtocolClient {
    endpoint: Box<dyn Endpoint>,
    sample_id: String,
    max_batch: usize,
    memo: Option<HashMap<(String, Coalition), f64>>,
    next_id: u64,
    wire_evals: u64,
}

impl ProtocolClient {
    pub fn new(endpoint: Box<dyn Endpoint>, sample_id: impl Into<String>, options: &ClientOptions) -> Self {
        Self {
            endpoint,
            sample_id: sample_id.into(),
            max_batch: options.max_batch.max(1),
            memo: options.memoize.then(HashMap::new),
            next_id: 1,
            wire_evals: 0,
        }
    }

    pub fn meta(&self) -> &Meta {
        self.endpoint.meta()
    }

    pub fn set_sample(&mut self, sample_id: impl Into<String>) {
        self.sample_id = sample_id.into();
    }

    /// Coalitions actually sent over the wire.
    pub fn wire_evals(&self) -> u64 {
        self.wire_evals
    }

    pub fn score_batch(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let total = self.meta().m + self.meta().n;
        if let Some(bad) = coalitions.iter().find(|c| c.max_index().is_some_and(|k| k >= total)) {
            return Err(Error::Protocol(format!("coalition {bad:?} outside {total} features")));
        }
        let mut known: HashMap<Coalition, f64> = HashMap::new();
        let mut to_send: Vec<Coalition> = Vec::new();
        for c in coalitions {
            if known.contains_key(c) || to_send.contains(c) {
                continue;
            }
            let memoized = self.memo.as_ref().and_then(|m| m.get(&(self.sample_id.clone(), c.clone())));
            match memoized {
                Some(&v) => {
                    known.insert(c.clone(), v);
                }
                None => to_send.push(c.clone()),
            }
        }

        let requests: Vec<ScoreRequest> = to_send
            .chunks(self.max_batch)
            .map(|chunk| {
                let id = self.next_id;
                self.next_id += 1;
                ScoreRequest { id, sample_id: self.sample_id.clone(), coalitions: chunk.iter().map(Coalition::to_vec).collect() }
            })
            .collect();
        let replies = if requests.is_empty() { Vec::new() } else { self.endpoint.exchange(&requests)? };
        for ((req, reply), chunk) in requests.iter().zip(replies).zip(to_send.chunks(self.max_batch)) {
            let scores = reply.into_scores(req.coalitions.len())?;
            self.wire_evals += scores.len() as u64;
            for (c, v) in chunk.iter().zip(scores) {
                if !v.is_finite() {
                    return Err(Error::Protocol(format!("non-finite score {v} for coalition {c:?}")));
                }
                if let Some(memo) = self.memo.as_mut() {
                    memo.insert((self.sample_id.clone(), c.clone()), v);
                }
                known.insert(c.clone(), v);
            }
        }
        Ok(coalitions.iter().map(|c| known[c]).collect())
    }
}

impl Scorer for ProtocolClient {
    fn score(&mut self, coalitions: &[Coalition]) -> std::result::Result<Vec<f64>, ScoreError> {
        self.score_batch(coalitions).map_err(|e| ScoreError::new(e.to_string()))
    }
}
