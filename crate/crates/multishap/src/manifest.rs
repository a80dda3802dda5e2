//! Run manifests and atomic file output.

use std::io::Write;
use std::path::Path;

use multishap_core::FeatureSpace;
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::error::{Error, Result};

pub const TOOL: &str = "multishap";

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(format!("writing {}", path.display())))?;
    tmp.write_all(bytes).map_err(Error::io(format!("writing {}", path.display())))?;
    tmp.persist(path).map_err(|e| Error::Io { context: format!("writing {}", path.display()), source: e.error })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Effective settings; feeding this manifest back through `--config`
    /// repeats the run.
    pub config: FileConfig,
    #[serde(default)]
    pub space: Option<FeatureSpace>,
    #[serde(default)]
    pub scorer: Option<String>,
    #[serde(default)]
    pub sample_id: Option<String>,
    pub evals_used: u64,
    /// Coalitions that reached an external scorer after memoization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_evals: Option<u64>,
    pub wall_ms: u64,
    #[serde(default)]
    pub coverage: Option<f64>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: FileConfig) -> Self {
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: Status::Ok,
            error: None,
            config,
            space: None,
            scorer: None,
            sample_id: None,
            evals_used: 0,
            wire_evals: None,
            wall_ms: 0,
            coverage: None,
            outputs: Vec::new(),
        }
    }

    pub fn failed(mut self, error: &Error) -> Self {
        self.status = Status::Failed;
        self.error = Some(error.to_string());
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidFile { path: path.to_path_buf(), reason: e.to_string() })
    }
}
