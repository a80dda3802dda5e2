//! Interaction matrix documents (JSON and CSV).
//!
//! ```text
//! {"v":1, "sample_id":str, "m":int, "n":int, "grid":[rows,cols]|null,
//!  "token_labels":[str]|null, "phi":[[num|null]], "evidence":[[num]],
//!  "stderr":[[num|null]], "metrics":{T,S,P,R,coverage}|null,
//!  "manifest":{config, scorer, evals_used, coverage, tool_version},
//!  "heatmap":{...}?, "correct":bool?}
//! ```
//!
//! Matrices are row-major, one row per patch. Floats are written with the
//! shortest representation that parses back to the same value.

use std::path::Path;

use multishap_core::{instance_metrics, CellMatrix, EstimatorConfig, FeatureSpace, InstanceMetrics, InteractionEstimate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::write_atomic;

pub const MATRIX_VERSION: u32 = 1;

/// Run summary embedded in a matrix document. Deliberately free of wall
/// time and output paths so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: EstimatorConfig,
    pub scorer: String,
    pub evals_used: u64,
    pub coverage: f64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapInfo {
    pub colormap: String,
    pub normalization: String,
    pub aggregate_bound: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_bounds: Vec<f64>,
}

impl HeatmapInfo {
    pub fn new(aggregate_bound: f64, token_bounds: Vec<f64>) -> Self {
        Self {
            colormap: crate::image_io::COLORMAP.into(),
            normalization: crate::image_io::NORMALIZATION.into(),
            aggregate_bound,
            token_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDocument {
    pub v: u32,
    pub sample_id: String,
    pub m: usize,
    pub n: usize,
    pub grid: Option<[usize; 2]>,
    pub token_labels: Option<Vec<String>>,
    pub phi: Vec<Vec<Option<f64>>>,
    pub evidence: Vec<Vec<f64>>,
    #[serde(default)]
    pub stderr: Option<Vec<Vec<Option<f64>>>>,
    #[serde(default)]
    pub metrics: Option<InstanceMetrics>,
    #[serde(default)]
    pub manifest: Option<RunInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapInfo>,
    /// Whether the model answered this sample correctly; passed through to
    /// reports as accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

fn nested(matrix: &CellMatrix) -> Vec<Vec<Option<f64>>> {
    (0..matrix.rows()).map(|r| matrix.row(r).to_vec()).collect()
}

impl MatrixDocument {
    pub fn from_estimate(sample_id: &str, space: &FeatureSpace, estimate: &InteractionEstimate, scorer: &str) -> Self {
        let n = space.tokens();
        Self {
            v: MATRIX_VERSION,
            sample_id: sample_id.to_string(),
            m: space.patches(),
            n,
            grid: space.grid().map(|(r, c)| [r, c]),
            token_labels: space.token_labels().map(<[String]>::to_vec),
            phi: nested(&estimate.phi),
            evidence: estimate.evidence.chunks(n).map(<[f64]>::to_vec).collect(),
            stderr: Some(nested(&estimate.stderr)),
            metrics: instance_metrics(&estimate.phi).ok(),
            manifest: Some(RunInfo {
                config: estimate.config.clone(),
                scorer: scorer.to_string(),
                evals_used: estimate.evals_used,
                coverage: estimate.coverage(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            }),
            heatmap: None,
            correct: None,
        }
    }

    /// Checks shapes and the embedded feature space.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Usage(reason));
        if self.v != MATRIX_VERSION {
            return bad(format!("unsupported matrix version {}", self.v));
        }
        self.space()?;
        if self.phi.len() != self.m || self.phi.iter().any(|r| r.len() != self.n) {
            return bad(format!("phi is not {}x{}", self.m, self.n));
        }
        if self.evidence.len() != self.m || self.evidence.iter().any(|r| r.len() != self.n) {
            return bad(format!("evidence is not {}x{}", self.m, self.n));
        }
        if let Some(se) = &self.stderr {
            if se.len() != self.m || se.iter().any(|r| r.len() != self.n) {
                return bad(format!("stderr is not {}x{}", self.m, self.n));
            }
        }
        if self.phi.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return bad("phi contains a non-finite value".into());
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FeatureSpace> {
        let mut space = FeatureSpace::new(self.m, self.n)?;
        if let Some([r, c]) = self.grid {
            space = space.with_grid(r, c)?;
        }
        if let Some(labels) = &self.token_labels {
            space = space.with_token_labels(labels.clone())?;
        }
        Ok(space)
    }

    pub fn phi_matrix(&self) -> CellMatrix {
        let cells = self.phi.iter().flatten().copied().collect();
        CellMatrix::from_cells(self.m, self.n, cells).expect("validated shape")
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(format!("reading {}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::InvalidFile { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// CSV with a header of token labels and one row per patch; missing
    /// cells are empty fields.
    pub fn to_csv(&self) -> Result<String> {
        let labels = self.labels();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("patch".to_string()).chain(labels);
        w.write_record(header).map_err(csv_error)?;
        for (i, row) in self.phi.iter().enumerate() {
            let fields = std::iter::once(i.to_string()).chain(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(fields).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    fn labels(&self) -> Vec<String> {
        match &self.token_labels {
            Some(l) => l.clone(),
            None => (0..self.n).map(|j| format!("t{j}")).collect(),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Usage(format!("csv: {e}"))
}

/// Reads a matrix CSV back into its token labels and cells.
pub fn read_csv(text: &str) -> Result<(Vec<String>, CellMatrix)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut cells = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != labels.len() + 1 {
            return Err(Error::Usage(format!("row {rows} has {} fields, expected {}", record.len(), labels.len() + 1)));
        }
        for field in record.iter().skip(1) {
            let v = if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().map_err(|_| Error::Usage(format!("bad number `{field}`")))?)
            };
            cells.push(v);
        }
        rows += 1;
    }
    let matrix = CellMatrix::from_cells(rows, labels.len(), cells).ok_or_else(|| Error::Usage("ragged csv".into()))?;
    Ok((labels, matrix))
}
