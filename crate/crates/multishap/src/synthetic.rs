//! Built-in synthetic scorers: game specs, fixture files, and servers that
//! expose a game over the wire protocol.
//!
//! Game spec syntax:
//!
//! ```text
//! additive[:c=1/2/3/4]               default coefficients 1..=m+n
//! purepair[:i=0,j=0,amp=1]           j is the token position
//! multilinear:seed=7[,density=0.5]   or multilinear:7
//! @path/to/fixture.json
//! ```
//!
//! Every inline form also accepts `m=` and `n=`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use multishap_core::{Coalition, FeatureSpace, GameKind, ScoreError, Scorer, SyntheticGame};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{to_line, ErrorResponse, Meta, Reply, ScoreRequest, ScoreResponse, Task, PROTOCOL_VERSION};

pub const DEFAULT_DENSITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum GameVariant {
    Additive { coefficients: Option<Vec<f64>> },
    PurePair { patch: usize, token: usize, amplitude: f64 },
    Multilinear { seed: u64, density: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GameSpec {
    Inline { variant: GameVariant, m: Option<usize>, n: Option<usize> },
    Fixture(PathBuf),
}

impl std::str::FromStr for GameSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix('@') {
            return Ok(GameSpec::Fixture(PathBuf::from(path)));
        }
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: BTreeMap<&str, &str> = BTreeMap::new();
        let mut bare = None;
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => {
                    params.insert(k.trim(), v.trim());
                }
                None => bare = Some(part.trim()),
            }
        }
        let bad = |what: &str| Error::usage(format!("game `{s}`: invalid {what}"));
        let num = |key: &str| -> Result<Option<usize>> {
            params.get(key).map(|v| v.parse().map_err(|_| bad(key))).transpose()
        };
        let m = num("m")?;
        let n = num("n")?;
        let allowed: &[&str] = match name {
            "additive" => &["m", "n", "c"],
            "purepair" => &["m", "n", "i", "j", "amp"],
            "multilinear" => &["m", "n", "seed", "density"],
            _ => return Err(Error::usage(format!("unknown game `{name}` (additive, purepair, multilinear, @fixture)"))),
        };
        if let Some(key) = params.keys().find(|k| !allowed.contains(k)) {
            return Err(Error::usage(format!("game `{s}`: unknown parameter `{key}`")));
        }
        if bare.is_some() && name != "multilinear" {
            return Err(bad("parameter list"));
        }
        let variant = match name {
            "additive" => {
                let coefficients = params
                    .get("c")
                    .map(|c| c.split('/').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
                    .transpose()
                    .map_err(|_| bad("coefficients"))?;
                GameVariant::Additive { coefficients }
            }
            "purepair" => GameVariant::PurePair {
                patch: num("i")?.unwrap_or(0),
                token: num("j")?.unwrap_or(0),
                amplitude: params.get("amp").map(|v| v.parse().map_err(|_| bad("amp"))).transpose()?.unwrap_or(1.0),
            },
            _ => {
                let seed = params.get("seed").copied().or(bare).ok_or_else(|| bad("seed (multilinear needs one)"))?;
                GameVariant::Multilinear {
                    seed: seed.parse().map_err(|_| bad("seed"))?,
                    density: params
                        .get("density")
                        .map(|v| v.parse().map_err(|_| bad("density")))
                        .transpose()?
                        .unwrap_or(DEFAULT_DENSITY),
                }
            }
        };
        Ok(GameSpec::Inline { variant, m, n })
    }
}

impl GameSpec {
    /// Builds the game. Sizes embedded in the spec win over `m`/`n`, which
    /// default to 2.
    pub fn build(&self, m: Option<usize>, n: Option<usize>) -> Result<SyntheticGame> {
        match self {
            GameSpec::Fixture(path) => {
                let fixture = GameFixture::load(path)?;
                let game = fixture.build().map_err(|e| Error::InvalidFile { path: path.clone(), reason: e.to_string() })?;
                let sp = game.space();
                if m.is_some_and(|m| m != sp.patches()) || n.is_some_and(|n| n != sp.tokens()) {
                    return Err(Error::usage(format!(
                        "fixture {} defines m={}, n={}, which conflicts with the requested sizes",
                        path.display(),
                        sp.patches(),
                        sp.tokens()
                    )));
                }
                Ok(game)
            }
            GameSpec::Inline { variant, m: sm, n: sn } => {
                let space = FeatureSpace::new(sm.or(m).unwrap_or(2), sn.or(n).unwrap_or(2))?;
                Ok(variant_game(space, variant)?)
            }
        }
    }
}

fn variant_game(space: FeatureSpace, variant: &GameVariant) -> multishap_core::Result<SyntheticGame> {
    match variant {
        GameVariant::Additive { coefficients } => {
            let c = coefficients.clone().unwrap_or_else(|| (1..=space.total()).map(|k| k as f64).collect());
            SyntheticGame::additive(space, c)
        }
        GameVariant::PurePair { patch, token, amplitude } => {
            let global = space.token_index(*token);
            SyntheticGame::pure_pair(space, *patch, global, *amplitude)
        }
        GameVariant::Multilinear { seed, density } => SyntheticGame::random_multilinear(space, *seed, *density),
    }
}

/// Game fixture file: `{"variant": ..., "params": {...}, "seed": ...}`.
///
/// `params` always carries `m` and `n`. Additive games list
/// `coefficients`; pure pairs give `patch`, `token` (position) and
/// `amplitude`. Multilinear games either give `density` with a seed, or
/// spell out `constant`, `linear` and `pairs` (`[k, l, b]` triples over
/// global indices) with a null seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFixture {
    pub variant: String,
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Deserialize)]
struct SizeParams {
    m: usize,
    n: usize,
}

#[derive(Deserialize)]
struct AdditiveParams {
    coefficients: Vec<f64>,
}

#[derive(Deserialize)]
struct PairParams {
    patch: usize,
    token: usize,
    #[serde(default = "one")]
    amplitude: f64,
}

#[derive(Deserialize)]
struct MultilinearParams {
    #[serde(default)]
    density: Option<f64>,
    #[serde(default)]
    constant: Option<f64>,
    #[serde(default)]
    linear: Option<Vec<f64>>,
    #[serde(default)]
    pairs: Option<Vec<(usize, usize, f64)>>,
}

fn one() -> f64 {
    1.0
}

impl GameFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidFile { path: path.to_path_buf(), reason: e.to_string() })
    }

    fn params<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(serde_json::Value::Object(self.params.clone()))
            .map_err(|e| Error::usage(format!("fixture params: {e}")))
    }

    pub fn build(&self) -> Result<SyntheticGame> {
        let size: SizeParams = self.params()?;
        let space = FeatureSpace::new(size.m, size.n)?;
        let game = match self.variant.as_str() {
            "additive" => {
                let p: AdditiveParams = self.params()?;
                SyntheticGame::additive(space, p.coefficients)?
            }
            "purepair" => {
                let p: PairParams = self.params()?;
                let global = space.token_index(p.token);
                SyntheticGame::pure_pair(space, p.patch, global, p.amplitude)?
            }
            "multilinear" => {
                let p: MultilinearParams = self.params()?;
                match (p.linear, self.seed) {
                    (Some(linear), _) => SyntheticGame::multilinear(
                        space,
                        p.constant.unwrap_or(0.0),
                        linear,
                        p.pairs.unwrap_or_default().into_iter().map(|(k, l, b)| ((k, l), b)),
                    )?,
                    (None, Some(seed)) => {
                        SyntheticGame::random_multilinear(space, seed, p.density.unwrap_or(DEFAULT_DENSITY))?
                    }
                    (None, None) => return Err(Error::usage("multilinear fixture needs a seed or explicit coefficients")),
                }
            }
            other => return Err(Error::usage(format!("unknown fixture variant `{other}`"))),
        };
        Ok(game)
    }

    /// Explicit fixture describing `game` exactly.
    pub fn from_game(game: &SyntheticGame) -> Self {
        let sp = game.space();
        let mut params = serde_json::Map::new();
        params.insert("m".into(), sp.patches().into());
        params.insert("n".into(), sp.tokens().into());
        let variant = match game.kind() {
            GameKind::Additive { coefficients } => {
                params.insert("coefficients".into(), serde_json::json!(coefficients));
                "additive"
            }
            GameKind::PurePair { patch, token, amplitude } => {
                params.insert("patch".into(), (*patch).into());
                params.insert("token".into(), (token - sp.patches()).into());
                params.insert("amplitude".into(), serde_json::json!(amplitude));
                "purepair"
            }
            GameKind::Multilinear { constant, linear, pairs } => {
                params.insert("constant".into(), serde_json::json!(constant));
                params.insert("linear".into(), serde_json::json!(linear));
                let triples: Vec<(usize, usize, f64)> = pairs.iter().map(|(&(k, l), &b)| (k, l, b)).collect();
                params.insert("pairs".into(), serde_json::json!(triples));
                "multilinear"
            }
        };
        Self { variant: variant.into(), params, seed: None }
    }
}

pub fn synthetic_meta(space: &FeatureSpace, sample_ids: Option<Vec<String>>) -> Meta {
    Meta {
        v: PROTOCOL_VERSION,
        m: space.patches(),
        n: space.tokens(),
        task: Task::Synthetic,
        deterministic: true,
        sample_ids,
    }
}

/// In-process scorer over a synthetic game, with an optional fixed delay
/// per scoring call to imitate model latency.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    game: SyntheticGame,
    delay: Option<Duration>,
    calls: u64,
    evals: u64,
}

impl SyntheticScorer {
    pub fn new(game: SyntheticGame) -> Self {
        Self { game, delay: None, calls: 0, evals: 0 }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = (!delay.is_zero()).then_some(delay);
        self
    }

    pub fn game(&self) -> &SyntheticGame {
        &self.game
    }

    pub fn meta(&self) -> Meta {
        synthetic_meta(self.game.space(), None)
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn evals(&self) -> u64 {
        self.evals
    }
}

impl Scorer for SyntheticScorer {
    fn score(&mut self, coalitions: &[Coalition]) -> std::result::Result<Vec<f64>, ScoreError> {
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
        self.calls += 1;
        self.evals += coalitions.len() as u64;
        self.game.score_all(coalitions)
    }
}

/// Deliberate misbehaviour for exercising client error paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the last score of every response.
    Short,
    /// Answer every request with an error object.
    Error,
    /// Echo a wrong request id.
    WrongId,
    /// Never answer.
    Stall,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Fault::Short),
            "error" => Ok(Fault::Error),
            "wrong-id" => Ok(Fault::WrongId),
            "stall" => Ok(Fault::Stall),
            _ => Err(Error::usage(format!("unknown fault `{s}` (short, error, wrong-id, stall)"))),
        }
    }
}

/// Request handler shared by the stdio and HTTP servers.
#[derive(Debug, Clone)]
pub struct SyntheticService {
    game: SyntheticGame,
    sample_ids: Option<Vec<String>>,
    delay: Option<Duration>,
    fault: Option<Fault>,
}

impl SyntheticService {
    pub fn new(game: SyntheticGame) -> Self {
        Self { game, sample_ids: None, delay: None, fault: None }
    }

    /// Restricts the accepted sample ids and advertises them in the meta.
    pub fn with_samples(mut self, ids: Vec<String>) -> Self {
        self.sample_ids = (!ids.is_empty()).then_some(ids);
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = (!delay.is_zero()).then_some(delay);
        self
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn meta(&self) -> Meta {
        synthetic_meta(self.game.space(), self.sample_ids.clone())
    }

    /// `None` means the request is deliberately left unanswered.
    pub fn handle(&self, req: &ScoreRequest) -> Option<Reply> {
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
        let fail = |error: String| Reply::Error(ErrorResponse { id: req.id, error });
        if let Some(ids) = &self.sample_ids {
            if !ids.contains(&req.sample_id) {
                return Some(fail(format!("unknown sample_id `{}`", req.sample_id)));
            }
        }
        let space = self.game.space();
        let mut coalitions = Vec::with_capacity(req.coalitions.len());
        for c in &req.coalitions {
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Some(fail(format!("coalition {c:?} is not strictly increasing")));
            }
            match space.coalition(c) {
                Ok(c) => coalitions.push(c),
                Err(e) => return Some(fail(e.to_string())),
            }
        }
        let mut scores = match self.game.score_all(&coalitions) {
            Ok(s) => s,
            Err(e) => return Some(fail(e.to_string())),
        };
        match self.fault {
            None => Some(Reply::Scores(ScoreResponse { id: req.id, scores })),
            Some(Fault::Short) => {
                scores.pop();
                Some(Reply::Scores(ScoreResponse { id: req.id, scores }))
            }
            Some(Fault::Error) => Some(fail("injected failure".into())),
            Some(Fault::WrongId) => Some(Reply::Scores(ScoreResponse { id: req.id + 1000, scores })),
            Some(Fault::Stall) => None,
        }
    }

    /// Reply to one raw request body.
    pub fn handle_text(&self, text: &str) -> Option<Reply> {
        match serde_json::from_str::<ScoreRequest>(text) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()))
                    .unwrap_or(0);
                Some(Reply::Error(ErrorResponse { id, error: format!("malformed request: {e}") }))
            }
        }
    }
}

/// Serves JSON lines: the meta first, then one reply per request line,
/// until the input closes.
pub fn serve_stdio(service: &SyntheticService, input: impl BufRead, mut output: impl Write) -> Result<()> {
    output.write_all(to_line(&service.meta())?.as_bytes()).map_err(Error::io("writing scorer output"))?;
    output.flush().map_err(Error::io("writing scorer output"))?;
    for line in input.lines() {
        let line = line.map_err(Error::io("reading scorer input"))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = service.handle_text(&line) {
            output.write_all(to_line(&reply)?.as_bytes()).map_err(Error::io("writing scorer output"))?;
            output.flush().map_err(Error::io("writing scorer output"))?;
        }
    }
    Ok(())
}

/// Running HTTP scorer; stops when dropped.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub fn serve_http(service: SyntheticService, addr: &str, workers: usize) -> Result<HttpServer> {
    let server = tiny_http::Server::http(addr).map_err(|e| Error::Transport(format!("cannot bind {addr}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Transport(format!("{addr} is not an IP address")))?;
    let server = Arc::new(server);
    let service = Arc::new(service);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let service = Arc::clone(&service);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    answer(&service, request, &stop);
                }
            })
        })
        .collect();
    Ok(HttpServer { server, stop, addr, workers })
}

fn answer(service: &SyntheticService, mut request: tiny_http::Request, stop: &AtomicBool) {
    let json = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let respond = |request: tiny_http::Request, status: u16, body: String| {
        let _ = request.respond(tiny_http::Response::from_string(body).with_status_code(status).with_header(json.clone()));
    };
    match (request.method(), request.url()) {
        (tiny_http::Method::Get, "/meta") => {
            let body = serde_json::to_string(&service.meta()).expect("meta serializes");
            respond(request, 200, body);
        }
        (tiny_http::Method::Post, "/score") => {
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                respond(request, 400, r#"{"id":0,"error":"unreadable body"}"#.into());
                return;
            }
            match service.handle_text(&body) {
                Some(reply) => {
                    let status = if matches!(reply, Reply::Error(_)) { 400 } else { 200 };
                    respond(request, status, serde_json::to_string(&reply).expect("reply serializes"));
                }
                // Hold the connection open until the client gives up.
                None => {
                    while !stop.load(Ordering::SeqCst) {
                        thread::sleep(Duration::from_millis(10));
                    }
                }
            }
        }
        _ => respond(request, 404, r#"{"id":0,"error":"not found"}"#.into()),
    }
}
