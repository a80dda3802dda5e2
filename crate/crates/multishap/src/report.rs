//! Dataset reports over directories of matrix documents.

use std::path::{Path, PathBuf};

use multishap_core::{dataset_metrics, instance_metrics, mean_std, DatasetMetrics, InstanceMetrics};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io::MatrixDocument;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub path: PathBuf,
    pub sample_id: String,
    pub seed: Option<u64>,
    pub metrics: InstanceMetrics,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub files: usize,
    pub skipped: Vec<Skipped>,
    pub n_total: usize,
    pub n_defined: usize,
    pub n_undefined: usize,
    pub metrics: DatasetMetrics,
    /// Fraction of samples marked correct, over samples that say.
    pub accuracy: Option<f64>,
    pub accuracy_per_seed: Option<MeanStd>,
}

/// `"0.5583 ± 0.0217"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

/// Seed tag from the nearest `seed<N>` directory above `path`.
pub fn seed_tag(path: &Path) -> Option<u64> {
    path.parent()?
        .ancestors()
        .filter_map(|p| p.file_name()?.to_str()?.strip_prefix("seed")?.parse().ok())
        .next()
}

fn find_documents(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(Error::io(format!("reading {}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(Error::io(format!("reading {}", dir.display())))?.path();
        if path.is_dir() {
            find_documents(&path, out)?;
        } else if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".phi.json")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every `*.phi.json` below the inputs (or the inputs themselves if
/// they are files). Unreadable or empty matrices are skipped.
pub fn collect(inputs: &[PathBuf]) -> Result<(Vec<Entry>, Vec<Skipped>)> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            find_documents(input, &mut paths)?;
        } else if input.exists() {
            paths.push(input.clone());
        } else {
            return Err(Error::usage(format!("{} does not exist", input.display())));
        }
    }
    paths.sort();
    paths.dedup();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let loaded = MatrixDocument::load(&path)
            .and_then(|doc| Ok((instance_metrics(&doc.phi_matrix())?, doc)));
        match loaded {
            Ok((metrics, doc)) => entries.push(Entry {
                seed: seed_tag(&path),
                path,
                sample_id: doc.sample_id,
                metrics,
                correct: doc.correct,
            }),
            Err(e) => skipped.push(Skipped { path, reason: e.to_string() }),
        }
    }
    Ok((entries, skipped))
}

/// Aggregates entries. Seed groups are used only when every entry is tagged.
pub fn build(entries: &[Entry], skipped: Vec<Skipped>) -> Result<Report> {
    if entries.is_empty() {
        return Err(Error::usage("no parsable matrices"));
    }
    let metrics: Vec<InstanceMetrics> = entries.iter().map(|e| e.metrics).collect();
    let seeds: Option<Vec<u64>> = entries.iter().map(|e| e.seed).collect();
    let dataset = dataset_metrics(&metrics, seeds.as_deref())?;

    let judged: Vec<&Entry> = entries.iter().filter(|e| e.correct.is_some()).collect();
    let accuracy = (!judged.is_empty())
        .then(|| judged.iter().filter(|e| e.correct == Some(true)).count() as f64 / judged.len() as f64);
    let accuracy_per_seed = match (&seeds, judged.is_empty()) {
        (Some(_), false) => {
            let mut groups: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
            for e in &judged {
                let g = groups.entry(e.seed.expect("all tagged")).or_default();
                g.0 += (e.correct == Some(true)) as usize;
                g.1 += 1;
            }
            let accs: Vec<f64> = groups.values().map(|&(c, n)| c as f64 / n as f64).collect();
            let (mean, std) = mean_std(&accs);
            Some(MeanStd { mean, std })
        }
        _ => None,
    };

    Ok(Report {
        files: entries.len() + skipped.len(),
        skipped,
        n_total: dataset.n_total,
        n_defined: dataset.n_defined,
        n_undefined: dataset.n_total - dataset.n_defined,
        metrics: dataset,
        accuracy,
        accuracy_per_seed,
    })
}

/// Aligned text summary. With seed groups, MSR and SDR (and accuracy) are
/// shown as mean ± std across groups.
pub fn render_text(report: &Report) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    rows.push(("files".into(), report.files.to_string()));
    rows.push(("skipped".into(), report.skipped.len().to_string()));
    rows.push(("samples".into(), report.n_total.to_string()));
    rows.push(("defined R".into(), report.n_defined.to_string()));
    rows.push(("undefined R".into(), report.n_undefined.to_string()));
    match &report.metrics.per_seed {
        Some(s) => {
            rows.push(("seeds".into(), s.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")));
            if let Some(a) = report.accuracy_per_seed {
                rows.push(("Acc".into(), format_mean_std(a.mean, a.std)));
            }
            rows.push(("MSR".into(), format_mean_std(s.msr_mean, s.msr_std)));
            rows.push(("SDR".into(), format_mean_std(s.sdr_mean, s.sdr_std)));
        }
        None => {
            if let Some(a) = report.accuracy {
                rows.push(("Acc".into(), format!("{a:.4}")));
            }
            rows.push(("MSR".into(), format!("{:.4}", report.metrics.msr)));
            rows.push(("SDR".into(), format!("{:.4}", report.metrics.sdr)));
        }
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}
