//! Wire schema (version 1) shared by the subprocess and HTTP transports.
//!
//! ```text
//! meta     {"v":1,"m":int,"n":int,"task":str,"deterministic":bool}
//! request  {"id":int,"sample_id":str,"coalitions":[[int,...],...]}
//! response {"id":int,"scores":[num,...]}
//! error    {"id":int,"error":str}
//! ```
//!
//! Subprocess framing is one UTF-8 JSON object per newline-terminated line;
//! the scorer announces its meta as the first line after start-up. Over
//! HTTP, `GET /meta` returns the meta object and `POST /score` takes a
//! request and returns a response or error object.
//!
//! A response may carry `"embeddings":[[z_v, z_t], ...]` instead of
//! `scores`; the client fuses each pair by cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[1];

/// Environment variable naming the scorer endpoint when `--scorer` is absent.
pub const SCORER_ENV: &str = "MULTISHAP_SCORER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    VqaLogit,
    RetrievalCosine,
    Synthetic,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub v: u32,
    pub m: usize,
    pub n: usize,
    pub task: Task,
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ids: Option<Vec<String>>,
}

impl Meta {
    pub fn validate(self) -> Result<Self> {
        if !SUPPORTED_VERSIONS.contains(&self.v) {
            return Err(Error::Protocol(format!(
                "unsupported protocol version {} (supported: {SUPPORTED_VERSIONS:?})",
                self.v
            )));
        }
        if self.m == 0 || self.n == 0 {
            return Err(Error::Protocol(format!("scorer advertised m={}, n={}", self.m, self.n)));
        }
        Ok(self)
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str::<Meta>(line)
            .map_err(|e| Error::Protocol(format!("malformed meta: {e}")))?
            .validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub sample_id: String,
    pub coalitions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub id: u64,
    pub embeddings: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Anything a scorer may send back for a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Scores(ScoreResponse),
    Embeddings(EmbeddingResponse),
    Error(ErrorResponse),
}

impl Reply {
    pub fn id(&self) -> u64 {
        match self {
            Reply::Scores(r) => r.id,
            Reply::Embeddings(r) => r.id,
            Reply::Error(r) => r.id,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("malformed reply: {e}")))
    }

    /// Scalar scores for a request of `expected` coalitions.
    pub fn into_scores(self, expected: usize) -> Result<Vec<f64>> {
        let scores = match self {
            Reply::Scores(r) => r.scores,
            Reply::Embeddings(r) => r
                .embeddings
                .iter()
                .map(|(zv, zt)| multishap_core::cosine_score(zv, zt))
                .collect::<std::result::Result<_, _>>()?,
            Reply::Error(e) => return Err(Error::Protocol(format!("scorer error: {}", e.error))),
        };
        if scores.len() != expected {
            return Err(Error::Protocol(format!(
                "length mismatch: {} scores for {expected} coalitions",
                scores.len()
            )));
        }
        Ok(scores)
    }
}

/// Compact single-line JSON with a trailing newline.
pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    Ok(line)
}
