//! Exhaustive enumeration of interaction and attribution values.
//!
//! Every routine here sums over all subsets of the remaining features in
//! ascending bitmask order, so the memoized [`ExactOracle`] and the direct
//! free functions perform the same floating-point operations in the same
//! order and agree bitwise for deterministic scorers.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CellMatrix;
use crate::scorer::{checked_scores, Scorer};
use crate::space::{Coalition, FeatureSpace};

/// Largest universe enumerated by default (about one million coalitions).
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 20;

const TABULATE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Kernel `s!(M-s-2)! / (2 (M-1)!)`, whose weights sum to 1/2.
    #[default]
    #[serde(alias = "paper")]
    Half,
    /// The classical Grabisch-Roubens kernel, twice the above.
    Classical,
}

impl core::str::FromStr for Normalization {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "half" | "paper" => Ok(Normalization::Half),
            "classical" => Ok(Normalization::Classical),
            _ => Err("normalization must be `half` (alias `paper`) or `classical`"),
        }
    }
}

impl Normalization {
    pub fn factor(self) -> f64 {
        match self {
            Normalization::Half => 1.0,
            Normalization::Classical => 2.0,
        }
    }
}

fn log_factorials(upto: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(upto + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..=upto {
        acc += libm::log(k as f64);
        table.push(acc);
    }
    table
}

/// Interaction kernel weights `w(s) = s!(M-s-2)! / (2 (M-1)!)` for
/// `s = 0..=M-2`, computed in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct SiiWeightTable {
    total: usize,
    weights: Vec<f64>,
}

impl SiiWeightTable {
    pub fn new(total: usize) -> Result<Self> {
        if total < 2 {
            return Err(Error::SizeOutOfRange { size: 0, max: 0 });
        }
        let lf = log_factorials(total);
        let ln2 = core::f64::consts::LN_2;
        let weights = (0..=total - 2)
            .map(|s| libm::exp(lf[s] + lf[total - s - 2] - ln2 - lf[total - 1]))
            .collect();
        Ok(Self { total, weights })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, size: usize) -> Result<f64> {
        self.weights
            .get(size)
            .copied()
            .ok_or(Error::SizeOutOfRange { size, max: self.total - 2 })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Single interaction kernel weight for coalition size `size` in a universe
/// of `total` features.
pub fn sii_weight(size: usize, total: usize) -> Result<f64> {
    if total < 2 || size > total - 2 {
        return Err(Error::SizeOutOfRange { size, max: total.saturating_sub(2) });
    }
    SiiWeightTable::new(total)?.get(size)
}

/// First-order Shapley weight `s!(M-s-1)! / M!`.
pub fn shapley_weight(size: usize, total: usize) -> Result<f64> {
    if total == 0 || size >= total {
        return Err(Error::SizeOutOfRange { size, max: total.saturating_sub(1) });
    }
    let lf = log_factorials(total);
    Ok(libm::exp(lf[size] + lf[total - size - 1] - lf[total]))
}

fn shapley_weights(total: usize) -> Vec<f64> {
    let lf = log_factorials(total);
    (0..total).map(|s| libm::exp(lf[s] + lf[total - s - 1] - lf[total])).collect()
}

fn check_limit(space: &FeatureSpace, limit: usize) -> Result<u32> {
    let total = space.total();
    if total > limit || total > 63 {
        return Err(Error::TooLarge { total, limit: limit.min(63) });
    }
    Ok(total as u32)
}

/// Subsets of `universe`, ascending, starting from the empty set.
fn subsets(universe: u64) -> impl Iterator<Item = u64> {
    let mut next = Some(0u64);
    core::iter::from_fn(move || {
        let cur = next?;
        let succ = cur.wrapping_sub(universe) & universe;
        next = (succ != 0).then_some(succ);
        Some(cur)
    })
}

/// Value lookup used by the shared summation kernels.
trait Values {
    fn value(&mut self, mask: u64) -> Result<f64>;
    fn values4(&mut self, masks: [u64; 4]) -> Result<[f64; 4]> {
        Ok([
            self.value(masks[0])?,
            self.value(masks[1])?,
            self.value(masks[2])?,
            self.value(masks[3])?,
        ])
    }
}

struct Table<'a>(&'a [f64]);

impl Values for Table<'_> {
    fn value(&mut self, mask: u64) -> Result<f64> {
        Ok(self.0[mask as usize])
    }
}

struct Direct<'a, S: ?Sized> {
    scorer: &'a mut S,
    evals: u64,
}

impl<S: Scorer + ?Sized> Values for Direct<'_, S> {
    fn value(&mut self, mask: u64) -> Result<f64> {
        Ok(checked_scores(self.scorer, &[Coalition::from_mask(mask)], &mut self.evals)?[0])
    }

    fn values4(&mut self, masks: [u64; 4]) -> Result<[f64; 4]> {
        let batch = masks.map(Coalition::from_mask);
        let s = checked_scores(self.scorer, &batch, &mut self.evals)?;
        Ok([s[0], s[1], s[2], s[3]])
    }
}

/// `(sum of w(|S|) * delta, sum of delta)` over all `S` avoiding `i` and `j`.
fn pair_sums(values: &mut impl Values, total: u32, i: usize, j: usize, w: &[f64]) -> Result<(f64, f64)> {
    let full = (1u64 << total) - 1;
    let (bi, bj) = (1u64 << i, 1u64 << j);
    let rest = full & !bi & !bj;
    let mut weighted = 0.0;
    let mut plain = 0.0;
    for s in subsets(rest) {
        let [vij, vi, vj, v] = values.values4([s | bi | bj, s | bi, s | bj, s])?;
        let delta = vij - vi - vj + v;
        weighted += w[s.count_ones() as usize] * delta;
        plain += delta;
    }
    Ok((weighted, plain))
}

fn shapley_sum(values: &mut impl Values, total: u32, i: usize, w: &[f64]) -> Result<f64> {
    let full = (1u64 << total) - 1;
    let bi = 1u64 << i;
    let mut acc = 0.0;
    for s in subsets(full & !bi) {
        let gain = values.value(s | bi)? - values.value(s)?;
        acc += w[s.count_ones() as usize] * gain;
    }
    Ok(acc)
}

fn banzhaf_scale(total: u32) -> f64 {
    1.0 / (1u64 << (total - 2)) as f64
}

/// Exact interaction index of `(patch, token)` by direct enumeration of all
/// `2^(M-2)` coalitions, without memoization.
pub fn exact_sii<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    patch: usize,
    token: usize,
    normalization: Normalization,
    limit: usize,
) -> Result<f64> {
    space.check_pair(patch, token)?;
    let total = check_limit(space, limit)?;
    let w = SiiWeightTable::new(total as usize)?;
    let mut direct = Direct { scorer, evals: 0 };
    let (weighted, _) = pair_sums(&mut direct, total, patch, token, w.weights())?;
    Ok(weighted * normalization.factor())
}

/// Exact Banzhaf interaction: the unweighted mean of the second-order
/// difference over all coalitions avoiding the pair.
pub fn exact_banzhaf<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    patch: usize,
    token: usize,
    limit: usize,
) -> Result<f64> {
    space.check_pair(patch, token)?;
    let total = check_limit(space, limit)?;
    let w = SiiWeightTable::new(total as usize)?;
    let mut direct = Direct { scorer, evals: 0 };
    let (_, plain) = pair_sums(&mut direct, total, patch, token, w.weights())?;
    Ok(plain * banzhaf_scale(total))
}

pub fn exact_shapley_value<S: Scorer + ?Sized>(
    scorer: &mut S,
    space: &FeatureSpace,
    feature: usize,
    limit: usize,
) -> Result<f64> {
    let total = check_limit(space, limit)?;
    if feature >= space.total() {
        return Err(Error::IndexOutOfRange { index: feature, total: space.total() });
    }
    let w = shapley_weights(total as usize);
    let mut direct = Direct { scorer, evals: 0 };
    shapley_sum(&mut direct, total, feature, &w)
}

/// Memoized exhaustive oracle: every coalition is scored exactly once.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    space: FeatureSpace,
    total: u32,
    values: Vec<f64>,
    sii_weights: SiiWeightTable,
    shapley_weights: Vec<f64>,
}

impl ExactOracle {
    /// Scores all `2^M` coalitions of `space`.
    pub fn tabulate<S: Scorer + ?Sized>(scorer: &mut S, space: &FeatureSpace, limit: usize) -> Result<Self> {
        let total = check_limit(space, limit)?;
        if total < 2 {
            return Err(Error::SizeOutOfRange { size: 0, max: 0 });
        }
        let count = 1usize << total;
        let mut values = vec![0.0; count];
        let mut evals = 0;
        let mut start = 0;
        while start < count {
            let end = (start + TABULATE_CHUNK).min(count);
            let batch: Vec<Coalition> = (start..end).map(|m| Coalition::from_mask(m as u64)).collect();
            let scores = checked_scores(scorer, &batch, &mut evals)?;
            values[start..end].copy_from_slice(&scores);
            start = end;
        }
        Ok(Self {
            space: space.clone(),
            total,
            values,
            sii_weights: SiiWeightTable::new(total as usize)?,
            shapley_weights: shapley_weights(total as usize),
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    /// `v(S)` for a coalition given as bitmask.
    pub fn value(&self, mask: u64) -> f64 {
        self.values[mask as usize]
    }

    pub fn evaluations(&self) -> usize {
        self.values.len()
    }

    pub fn sii(&self, patch: usize, token: usize, normalization: Normalization) -> Result<f64> {
        self.space.check_pair(patch, token)?;
        let (weighted, _) =
            pair_sums(&mut Table(&self.values), self.total, patch, token, self.sii_weights.weights())?;
        Ok(weighted * normalization.factor())
    }

    pub fn banzhaf(&self, patch: usize, token: usize) -> Result<f64> {
        self.space.check_pair(patch, token)?;
        let (_, plain) =
            pair_sums(&mut Table(&self.values), self.total, patch, token, self.sii_weights.weights())?;
        Ok(plain * banzhaf_scale(self.total))
    }

    pub fn shapley_value(&self, feature: usize) -> Result<f64> {
        if feature >= self.space.total() {
            return Err(Error::IndexOutOfRange { index: feature, total: self.space.total() });
        }
        shapley_sum(&mut Table(&self.values), self.total, feature, &self.shapley_weights)
    }

    pub fn sii_matrix(&self, normalization: Normalization) -> CellMatrix {
        self.pair_matrix(|i, j| self.sii(i, j, normalization))
    }

    pub fn banzhaf_matrix(&self) -> CellMatrix {
        self.pair_matrix(|i, j| self.banzhaf(i, j))
    }

    pub fn shapley_values(&self) -> Vec<f64> {
        (0..self.space.total())
            .map(|k| self.shapley_value(k).expect("index in range"))
            .collect()
    }

    fn pair_matrix(&self, f: impl Fn(usize, usize) -> Result<f64>) -> CellMatrix {
        let (m, n) = (self.space.patches(), self.space.tokens());
        let cells = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, m + j)))
            .map(|(i, j)| Some(f(i, j).expect("valid pair")))
            .collect();
        CellMatrix::from_cells(m, n, cells).expect("m x n cells")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::SyntheticGame;
    use crate::scorer::FnScorer;

    fn space(m: usize, n: usize) -> FeatureSpace {
        FeatureSpace::new(m, n).unwrap()
    }

    /// Factorials by repeated multiplication, independent of the log path.
    fn factorial(k: usize) -> f64 {
        (1..=k).map(|x| x as f64).product()
    }

    #[test]
    fn weight_examples() {
        assert!((sii_weight(0, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((sii_weight(0, 3).unwrap() - 0.25).abs() < 1e-15);
        for total in 2..=12 {
            for s in 0..=total - 2 {
                let direct = factorial(s) * factorial(total - s - 2) / (2.0 * factorial(total - 1));
                let w = sii_weight(s, total).unwrap();
                assert!((w - direct).abs() <= 1e-14 * direct, "M={total} s={s}");
                assert!(w > 0.0);
            }
        }
        assert!(sii_weight(3, 4).is_err());
        assert!(sii_weight(0, 1).is_err());
    }

    #[test]
    fn weights_sum_to_half_over_subsets() {
        // M = 6: brute-force over the 2^4 subsets of the four other features.
        let w = SiiWeightTable::new(6).unwrap();
        let total: f64 = (0u32..16).map(|s| w.get(s.count_ones() as usize).unwrap()).sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn subset_enumeration_is_ascending_and_complete() {
        let all: Vec<u64> = subsets(0b10110).collect();
        assert_eq!(all, vec![0, 2, 4, 6, 16, 18, 20, 22]);
        assert_eq!(subsets(0).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn exact_examples() {
        let sp = space(2, 2);
        let mut pp = SyntheticGame::pure_pair(sp.clone(), 0, 2, 1.0).unwrap();
        let lim = DEFAULT_EXHAUSTIVE_LIMIT;
        assert!((exact_sii(&mut pp, &sp, 0, 2, Normalization::Half, lim).unwrap() - 0.5).abs() < 1e-12);
        assert!((exact_sii(&mut pp, &sp, 0, 2, Normalization::Classical, lim).unwrap() - 1.0).abs() < 1e-12);
        assert!(exact_sii(&mut pp, &sp, 1, 3, Normalization::Half, lim).unwrap().abs() < 1e-12);
        assert!((exact_banzhaf(&mut pp, &sp, 0, 2, lim).unwrap() - 1.0).abs() < 1e-12);
        assert!((exact_shapley_value(&mut pp, &sp, 0, lim).unwrap() - 0.5).abs() < 1e-12);
        assert!(exact_shapley_value(&mut pp, &sp, 1, lim).unwrap().abs() < 1e-12);

        let mut add = SyntheticGame::additive(sp.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(exact_sii(&mut add, &sp, 1, 3, Normalization::Half, lim).unwrap().abs() < 1e-12);
        assert!((exact_shapley_value(&mut add, &sp, 2, lim).unwrap() - 3.0).abs() < 1e-12);

        let sp6 = space(3, 3);
        let mut ml = SyntheticGame::multilinear(sp6.clone(), 0.0, vec![0.0; 6], [((0, 3), -3.0)]).unwrap();
        assert!((exact_sii(&mut ml, &sp6, 0, 3, Normalization::Half, lim).unwrap() + 1.5).abs() < 1e-12);
        let mut ml = SyntheticGame::multilinear(sp6.clone(), 0.0, vec![0.0; 6], [((1, 4), 0.7)]).unwrap();
        assert!((exact_banzhaf(&mut ml, &sp6, 1, 4, lim).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn limit_is_enforced() {
        let sp = space(11, 10);
        let mut g = SyntheticGame::pure_pair(sp.clone(), 0, 11, 1.0).unwrap();
        assert_eq!(
            exact_sii(&mut g, &sp, 0, 11, Normalization::Half, DEFAULT_EXHAUSTIVE_LIMIT),
            Err(Error::TooLarge { total: 21, limit: 20 })
        );
        assert!(ExactOracle::tabulate(&mut g, &sp, DEFAULT_EXHAUSTIVE_LIMIT).is_err());
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let sp = space(1, 1);
        let mut bad = FnScorer(|c: &Coalition| if c.len() == 2 { f64::NAN } else { 0.0 });
        assert!(matches!(
            exact_sii(&mut bad, &sp, 0, 1, Normalization::Half, 20),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn memoized_matches_direct_bitwise() {
        let sp = space(3, 4);
        let g = SyntheticGame::random_multilinear(sp.clone(), 5, 0.6).unwrap();
        // non-multilinear perturbation so the sums are not trivially constant
        let mut scorer = FnScorer(|c: &Coalition| {
            let base = g.evaluate(c).unwrap();
            let size = c.len() as f64;
            libm::sin(base * 1.7) + size * size * 0.01
        });
        let oracle = ExactOracle::tabulate(&mut scorer, &sp, 20).unwrap();
        for i in 0..3 {
            for j in 3..7 {
                let a = oracle.sii(i, j, Normalization::Half).unwrap();
                let b = exact_sii(&mut scorer, &sp, i, j, Normalization::Half, 20).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
                let a = oracle.banzhaf(i, j).unwrap();
                let b = exact_banzhaf(&mut scorer, &sp, i, j, 20).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        for k in 0..7 {
            let a = oracle.shapley_value(k).unwrap();
            let b = exact_shapley_value(&mut scorer, &sp, k, 20).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
