//! Synergy/suppression summaries of interaction matrices.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CellMatrix;

/// Threshold above which a sample counts as synergy-dominated.
pub const SYNERGY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    /// Total interaction strength, the sum of absolute cell values.
    #[serde(rename = "T")]
    pub total: f64,
    /// Sum of positive cell values.
    #[serde(rename = "S")]
    pub synergy: f64,
    /// Sum of magnitudes of negative cell values.
    #[serde(rename = "P")]
    pub suppression: f64,
    /// `S / T`; undefined when `T = 0`.
    #[serde(rename = "R")]
    pub ratio: Option<f64>,
    /// Fraction of cells that contributed.
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionType {
    Synergistic,
    Suppressive,
    Undefined,
}

/// Computes `T`, `S`, `P` and `R` over the non-missing cells of `phi`.
/// `T` is formed as `S + P` so the identity holds exactly.
pub fn instance_metrics(phi: &CellMatrix) -> Result<InstanceMetrics> {
    let mut synergy = 0.0;
    let mut suppression = 0.0;
    let mut present = 0usize;
    for value in phi.cells().iter().flatten() {
        present += 1;
        if *value > 0.0 {
            synergy += value;
        } else {
            suppression -= value;
        }
    }
    if present == 0 {
        return Err(Error::AllMissing);
    }
    let total = synergy + suppression;
    let ratio = (total > 0.0).then(|| synergy / total);
    Ok(InstanceMetrics { total, synergy, suppression, ratio, coverage: phi.coverage() })
}

pub fn classify_interaction(metrics: &InstanceMetrics) -> InteractionType {
    match metrics.ratio {
        None => InteractionType::Undefined,
        Some(r) if r > SYNERGY_THRESHOLD => InteractionType::Synergistic,
        Some(_) => InteractionType::Suppressive,
    }
}

/// Mean and spread of per-seed dataset metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub msr_mean: f64,
    pub msr_std: f64,
    pub sdr_mean: f64,
    pub sdr_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    /// Mean synergy ratio over samples with a defined ratio.
    #[serde(rename = "MSR")]
    pub msr: f64,
    /// Fraction of defined samples with ratio strictly above 0.5.
    #[serde(rename = "SDR")]
    pub sdr: f64,
    pub n_total: usize,
    pub n_defined: usize,
    pub per_seed: Option<SeedSummary>,
}

fn msr_sdr(ratios: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let (mut sum, mut dominant, mut count) = (0.0, 0usize, 0usize);
    for r in ratios {
        sum += r;
        dominant += (r > SYNERGY_THRESHOLD) as usize;
        count += 1;
    }
    (count > 0).then(|| (sum / count as f64, dominant as f64 / count as f64, count))
}

/// Sample standard deviation (n - 1); zero for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Dataset-level MSR and SDR. Samples with an undefined ratio are excluded
/// from both and counted in `n_total - n_defined`.
///
/// With `seeds` (one tag per sample), MSR and SDR are also computed per seed
/// group and summarized as mean and sample standard deviation across groups;
/// groups without any defined ratio are skipped.
pub fn dataset_metrics(samples: &[InstanceMetrics], seeds: Option<&[u64]>) -> Result<DatasetMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    let (msr, sdr, n_defined) =
        msr_sdr(samples.iter().filter_map(|s| s.ratio)).ok_or(Error::NoDefinedRatio)?;

    let per_seed = match seeds {
        None => None,
        Some(tags) => {
            if tags.len() != samples.len() {
                return Err(Error::ShapeMismatch { expected: samples.len(), got: tags.len() });
            }
            let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for (s, &tag) in samples.iter().zip(tags) {
                let entry = groups.entry(tag).or_default();
                if let Some(r) = s.ratio {
                    entry.push(r);
                }
            }
            let mut seeds_used = Vec::new();
            let mut msrs = Vec::new();
            let mut sdrs = Vec::new();
            for (tag, ratios) in groups {
                if let Some((g_msr, g_sdr, _)) = msr_sdr(ratios.into_iter()) {
                    seeds_used.push(tag);
                    msrs.push(g_msr);
                    sdrs.push(g_sdr);
                }
            }
            let (msr_mean, msr_std) = mean_std(&msrs);
            let (sdr_mean, sdr_std) = mean_std(&sdrs);
            Some(SeedSummary { seeds: seeds_used, msr_mean, msr_std, sdr_mean, sdr_std })
        }
    };

    Ok(DatasetMetrics { msr, sdr, n_total: samples.len(), n_defined, per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn with_ratio(r: Option<f64>) -> InstanceMetrics {
        InstanceMetrics { total: 1.0, synergy: r.unwrap_or(0.0), suppression: 0.0, ratio: r, coverage: 1.0 }
    }

    #[test]
    fn instance_examples() {
        let phi = CellMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, -0.25]]).unwrap();
        let m = instance_metrics(&phi).unwrap();
        assert_eq!((m.total, m.synergy, m.suppression), (0.75, 0.5, 0.25));
        assert!((m.ratio.unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let zero = CellMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let m = instance_metrics(&zero).unwrap();
        assert_eq!((m.total, m.synergy, m.suppression, m.ratio), (0.0, 0.0, 0.0, None));
        assert_eq!(classify_interaction(&m), InteractionType::Undefined);
    }

    #[test]
    fn table_example_one() {
        let phi = CellMatrix::from_rows(&[vec![45.59, -38.92]]).unwrap();
        let m = instance_metrics(&phi).unwrap();
        assert!((m.total - 84.51).abs() < 1e-9);
        assert!((m.ratio.unwrap() - 0.5394).abs() < 1e-4);
        assert_eq!(classify_interaction(&m), InteractionType::Synergistic);
    }

    #[test]
    fn missing_cells_skip() {
        let phi = CellMatrix::from_cells(1, 3, vec![Some(1.0), None, Some(-1.0)]).unwrap();
        let m = instance_metrics(&phi).unwrap();
        assert_eq!(m.total, 2.0);
        assert!((m.coverage - 2.0 / 3.0).abs() < 1e-15);
        let none = CellMatrix::missing(2, 2);
        assert_eq!(instance_metrics(&none), Err(Error::AllMissing));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_interaction(&with_ratio(Some(0.5394))), InteractionType::Synergistic);
        assert_eq!(classify_interaction(&with_ratio(Some(0.4601))), InteractionType::Suppressive);
        assert_eq!(classify_interaction(&with_ratio(Some(0.5))), InteractionType::Suppressive);
        assert_eq!(classify_interaction(&with_ratio(None)), InteractionType::Undefined);
    }

    #[test]
    fn dataset_examples() {
        let d = dataset_metrics(&[with_ratio(Some(0.6)), with_ratio(Some(0.4))], None).unwrap();
        assert!((d.msr - 0.5).abs() < 1e-15);
        assert_eq!(d.sdr, 0.5);

        let d = dataset_metrics(&[with_ratio(Some(0.5394)), with_ratio(Some(0.4601))], None).unwrap();
        assert!((d.msr - 0.49975).abs() < 1e-12);
        assert_eq!(d.sdr, 0.5);

        let d = dataset_metrics(&[with_ratio(Some(0.5)), with_ratio(Some(0.5))], None).unwrap();
        assert_eq!(d.sdr, 0.0);
    }

    #[test]
    fn undefined_ratios_are_excluded() {
        let d = dataset_metrics(&[with_ratio(Some(0.8)), with_ratio(None)], None).unwrap();
        assert_eq!((d.n_total, d.n_defined), (2, 1));
        assert_eq!((d.msr, d.sdr), (0.8, 1.0));
        assert_eq!(dataset_metrics(&[with_ratio(None)], None), Err(Error::NoDefinedRatio));
        assert!(dataset_metrics(&[], None).is_err());
    }

    #[test]
    fn per_seed_summary() {
        let samples = [0.6, 0.4, 0.7, 0.7, 0.2, 0.3].map(|r| with_ratio(Some(r)));
        let seeds = [0, 0, 1, 1, 2, 2];
        let d = dataset_metrics(&samples, Some(&seeds)).unwrap();
        let s = d.per_seed.unwrap();
        assert_eq!(s.seeds, vec![0, 1, 2]);
        // group MSRs 0.5, 0.7, 0.25 ; SDRs 0.5, 1.0, 0.0
        assert!((s.msr_mean - 1.45 / 3.0).abs() < 1e-12);
        assert!((s.sdr_mean - 0.5).abs() < 1e-12);
        assert!((s.sdr_std - 0.5).abs() < 1e-12);
        let expect_msr_std = {
            let mu = 1.45 / 3.0;
            let ss: f64 = [0.5, 0.7, 0.25].iter().map(|v: &f64| (v - mu) * (v - mu)).sum();
            libm::sqrt(ss / 2.0)
        };
        assert!((s.msr_std - expect_msr_std).abs() < 1e-12);
    }
}
