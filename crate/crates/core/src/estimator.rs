//! Monte-Carlo estimation of the patch-token interaction matrix.
//!
//! Each sampled coalition `S` contributes one second-order difference to
//! every patch-token pair absent from `S`. All differences for one
//! coalition share `v(S)` and the single-feature extensions `v(S + {k})`,
//! so a coalition with `a_v` absent patches and `a_t` absent tokens costs
//! at most `1 + a_v + a_t + a_v * a_t` scorer evaluations.
//!
//! * [`Mode::Uniform`] averages the differences unweighted; the result
//!   converges to the Banzhaf interaction index.
//! * [`Mode::Stratified`] draws coalition sizes uniformly and reweights each
//!   difference by `1 / ((M - s)(M - s - 1))`, a self-normalized importance
//!   sampler for the size kernel `s!(M-s-2)! / (2 (M-1)!)`. The normalized
//!   mean is halved because that kernel sums to 1/2.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::sampling::Mode;
use crate::error::{Error, Result};
use crate::matrix::CellMatrix;
use crate::sampling::sample_coalition;
use crate::scorer::{checked_scores, Scorer};
use crate::space::{Coalition, FeatureSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: Mode,
    /// Number of sampled coalitions.
    #[serde(rename = "K")]
    pub samples: usize,
    pub seed: u64,
    /// Fail when any cell ends without evidence.
    #[serde(default)]
    pub strict_missing: bool,
    /// Concurrency hint for scorer backends; never affects results.
    #[serde(default = "default_parallel")]
    pub max_parallel_scores: usize,
    /// Reuse scores of coalitions seen earlier in the run.
    #[serde(default = "default_cache")]
    pub cache: bool,
}

fn default_parallel() -> usize {
    1
}

fn default_cache() -> bool {
    true
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Stratified,
            samples: 128,
            seed: 0,
            strict_missing: false,
            max_parallel_scores: default_parallel(),
            cache: default_cache(),
        }
    }
}

impl EstimatorConfig {
    pub fn new(mode: Mode, samples: usize, seed: u64) -> Self {
        Self { mode, samples, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("K must be at least 1"));
        }
        if self.max_parallel_scores == 0 {
            return Err(Error::InvalidConfig("max_parallel_scores must be at least 1"));
        }
        Ok(())
    }
}

/// One second-order difference observed for a patch-token pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRecord {
    /// Patch index in `0..m`.
    pub patch: usize,
    /// Token position in `0..n` (global index `m + token`).
    pub token: usize,
    /// Size of the coalition the difference was taken at.
    pub size: usize,
    /// Importance weight (1 in uniform mode).
    pub weight: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEstimate {
    /// `m x n` interaction values; `None` where no sample covered the pair.
    pub phi: CellMatrix,
    /// Row-major `m x n` accumulated weights (counts in uniform mode).
    pub evidence: Vec<f64>,
    /// Per-cell standard error; `None` with fewer than two observations.
    pub stderr: CellMatrix,
    /// Scorer evaluations issued.
    pub evals_used: u64,
    pub config: EstimatorConfig,
}

impl InteractionEstimate {
    pub fn missing(&self, patch: usize, token: usize) -> bool {
        self.phi.get(patch, token).is_none()
    }

    pub fn coverage(&self) -> f64 {
        self.phi.coverage()
    }
}

/// Importance weight of a coalition of size `size` under stratified sampling.
pub fn stratified_weight(size: usize, total: usize) -> f64 {
    let absent = (total - size) as f64;
    1.0 / (absent * (absent - 1.0))
}

/// Evaluations the estimator plans for coalition `s` before any caching:
/// zero when no patch-token pair is absent, else `1 + a_v + a_t + a_v a_t`.
pub fn planned_evaluations(space: &FeatureSpace, s: &Coalition) -> u64 {
    let (a_v, a_t) = absent_counts(space, s);
    if a_v == 0 || a_t == 0 {
        0
    } else {
        (1 + a_v + a_t + a_v * a_t) as u64
    }
}

fn absent_counts(space: &FeatureSpace, s: &Coalition) -> (usize, usize) {
    let present_v = s.iter().filter(|&k| k < space.patches()).count();
    (space.patches() - present_v, space.tokens() - (s.len() - present_v))
}

/// `v(S + {i, j}) - v(S + {i}) - v(S + {j}) + v(S)` for patch `patch` and
/// token `token` (global indices), both absent from `s`.
pub fn second_order_delta<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    s: &Coalition,
    patch: usize,
    token: usize,
) -> Result<f64> {
    space.check_pair(patch, token)?;
    if !space.contains(s) {
        return Err(Error::SpaceMismatch);
    }
    for k in [patch, token] {
        if s.contains(k) {
            return Err(Error::FeaturePresent(k));
        }
    }
    let batch = [s.with_pair(patch, token), s.with(patch), s.with(token), s.clone()];
    let v = checked_scores(scorer, &batch, &mut 0)?;
    Ok(v[0] - v[1] - v[2] + v[3])
}

pub fn estimate<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    config: &EstimatorConfig,
) -> Result<InteractionEstimate> {
    run(scorer, space, config, false).map(|(est, _)| est)
}

/// [`estimate`] that also returns every recorded difference, in sample
/// order then pair order.
pub fn estimate_with_records<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    config: &EstimatorConfig,
) -> Result<(InteractionEstimate, Vec<DeltaRecord>)> {
    run(scorer, space, config, true)
}

fn run<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    config: &EstimatorConfig,
    keep_records: bool,
) -> Result<(InteractionEstimate, Vec<DeltaRecord>)> {
    config.validate()?;
    let (m, n, total) = (space.patches(), space.tokens(), space.total());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cache: BTreeMap<Coalition, f64> = BTreeMap::new();
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m * n];
    let mut records = Vec::new();
    let mut evals = 0u64;

    for _ in 0..config.samples {
        let s = sample_coalition(&mut rng, config.mode, total);
        let absent_v: Vec<usize> = (0..m).filter(|&i| !s.contains(i)).collect();
        let absent_t: Vec<usize> = (m..total).filter(|&j| !s.contains(j)).collect();
        if absent_v.is_empty() || absent_t.is_empty() {
            continue;
        }
        if !config.cache {
            cache.clear();
        }

        let mut needed = Vec::with_capacity(1 + absent_v.len() + absent_t.len() + absent_v.len() * absent_t.len());
        needed.push(s.clone());
        needed.extend(absent_v.iter().chain(&absent_t).map(|&k| s.with(k)));
        for &i in &absent_v {
            needed.extend(absent_t.iter().map(|&j| s.with_pair(i, j)));
        }
        let pending: Vec<Coalition> = needed.iter().filter(|c| !cache.contains_key(c)).cloned().collect();
        if !pending.is_empty() {
            let scores = checked_scores(scorer, &pending, &mut evals)?;
            cache.extend(pending.into_iter().zip(scores));
        }

        let weight = match config.mode {
            Mode::Uniform => 1.0,
            Mode::Stratified => stratified_weight(s.len(), total),
        };
        let base = cache[&s];
        for &i in &absent_v {
            let vi = cache[&s.with(i)];
            for &j in &absent_t {
                let vj = cache[&s.with(j)];
                let vij = cache[&s.with_pair(i, j)];
                let delta = vij - vi - vj + base;
                let token = j - m;
                cells[i * n + token].push((weight, delta));
                if keep_records {
                    records.push(DeltaRecord { patch: i, token, size: s.len(), weight, delta });
                }
            }
        }
    }

    let mut phi = CellMatrix::missing(m, n);
    let mut stderr = CellMatrix::missing(m, n);
    let mut evidence = vec![0.0; m * n];
    for (idx, obs) in cells.iter().enumerate() {
        let summary = summarize(obs, config.mode);
        evidence[idx] = summary.evidence;
        phi.set(idx / n, idx % n, summary.mean);
        stderr.set(idx / n, idx % n, summary.stderr);
    }

    if config.strict_missing {
        let missing = phi.missing_count();
        if missing > 0 {
            return Err(Error::MissingCells { missing, total: m * n });
        }
    }

    Ok((
        InteractionEstimate { phi, evidence, stderr, evals_used: evals, config: config.clone() },
        records,
    ))
}

struct CellSummary {
    evidence: f64,
    mean: Option<f64>,
    stderr: Option<f64>,
}

/// Weighted mean and its standard error over `(weight, delta)` pairs in
/// observation order.
fn summarize(obs: &[(f64, f64)], mode: Mode) -> CellSummary {
    if obs.is_empty() {
        return CellSummary { evidence: 0.0, mean: None, stderr: None };
    }
    // Incremental weighted mean: equal to sum(w d) / sum(w), and exact when
    // every difference is the same.
    let mut weight_sum = 0.0;
    let mut mean = 0.0;
    for &(w, d) in obs {
        weight_sum += w;
        mean += (w / weight_sum) * (d - mean);
    }
    let stderr = (obs.len() >= 2).then(|| match mode {
        Mode::Uniform => {
            let ss: f64 = obs.iter().map(|&(_, d)| (d - mean) * (d - mean)).sum();
            let count = obs.len() as f64;
            libm::sqrt(ss / (count * (count - 1.0)))
        }
        Mode::Stratified => {
            let ss: f64 = obs.iter().map(|&(w, d)| w * w * (d - mean) * (d - mean)).sum();
            0.5 * libm::sqrt(ss) / weight_sum
        }
    });
    let scale = match mode {
        Mode::Uniform => 1.0,
        Mode::Stratified => 0.5,
    };
    CellSummary { evidence: weight_sum, mean: Some(scale * mean), stderr }
}

/// Per-cell standard errors from grouped difference records.
///
/// Uniform mode uses the sample standard error of the mean; stratified mode
/// uses the delta-method variance of the self-normalized weighted mean,
/// scaled by the same 1/2 as the estimate. Cells with fewer than two
/// records are `None`.
pub fn standard_errors(records: &[DeltaRecord], space: &FeatureSpace, mode: Mode) -> Result<CellMatrix> {
    let (m, n) = (space.patches(), space.tokens());
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m * n];
    for r in records {
        if r.patch >= m || r.token >= n {
            return Err(Error::NotCrossModal { patch: r.patch, token: m + r.token });
        }
        cells[r.patch * n + r.token].push((r.weight, r.delta));
    }
    let mut out = CellMatrix::missing(m, n);
    for (idx, obs) in cells.iter().enumerate() {
        out.set(idx / n, idx % n, summarize(obs, mode).stderr);
    }
    Ok(out)
}
