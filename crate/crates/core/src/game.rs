//! Synthetic cooperative games with closed-form interaction values.
//!
//! These serve both as in-process scorers and as ground truth for the
//! estimators. Closed forms follow the half-normalized interaction index
//! used throughout this crate (a pure pair of amplitude `a` scores `a / 2`).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scorer::{ScoreError, Scorer};
use crate::space::{Coalition, FeatureSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum GameKind {
    /// `v(S) = sum of coefficients[k] for k in S`.
    Additive { coefficients: Vec<f64> },
    /// `v(S) = amplitude` if both `patch` and `token` are in `S`, else 0.
    PurePair { patch: usize, token: usize, amplitude: f64 },
    /// `v(S) = constant + sum linear[k] + sum pairs[{k,l}]` over members of `S`.
    /// Pair keys are stored with `k < l`.
    Multilinear { constant: f64, linear: Vec<f64>, pairs: BTreeMap<(usize, usize), f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGame {
    space: FeatureSpace,
    kind: GameKind,
}

impl SyntheticGame {
    pub fn new(space: FeatureSpace, kind: GameKind) -> Result<Self> {
        let total = space.total();
        match &kind {
            GameKind::Additive { coefficients } => {
                if coefficients.len() != total {
                    return Err(Error::ShapeMismatch { expected: total, got: coefficients.len() });
                }
            }
            GameKind::PurePair { patch, token, .. } => space.check_pair(*patch, *token)?,
            GameKind::Multilinear { linear, pairs, .. } => {
                if linear.len() != total {
                    return Err(Error::ShapeMismatch { expected: total, got: linear.len() });
                }
                for &(k, l) in pairs.keys() {
                    if k >= l {
                        return Err(Error::DuplicateIndex(k));
                    }
                    if l >= total {
                        return Err(Error::IndexOutOfRange { index: l, total });
                    }
                }
            }
        }
        Ok(Self { space, kind })
    }

    pub fn additive(space: FeatureSpace, coefficients: Vec<f64>) -> Result<Self> {
        Self::new(space, GameKind::Additive { coefficients })
    }

    pub fn pure_pair(space: FeatureSpace, patch: usize, token: usize, amplitude: f64) -> Result<Self> {
        Self::new(space, GameKind::PurePair { patch, token, amplitude })
    }

    /// Multilinear game from unordered pair coefficients; keys may be given
    /// in either order but must name distinct features.
    pub fn multilinear(
        space: FeatureSpace,
        constant: f64,
        linear: Vec<f64>,
        pairs: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((a, b), coef) in pairs {
            if a == b {
                return Err(Error::DuplicateIndex(a));
            }
            *map.entry((a.min(b), a.max(b))).or_insert(0.0) += coef;
        }
        Self::new(space, GameKind::Multilinear { constant, linear, pairs: map })
    }

    /// Reproducible random multilinear game.
    ///
    /// Every unordered feature pair (within-modality pairs included) gets a
    /// coefficient with probability `density`. All coefficients are uniform
    /// on `[-1, 1]`.
    pub fn random_multilinear(space: FeatureSpace, seed: u64, density: f64) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::InvalidDensity(density));
        }
        let total = space.total();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let constant = rng.gen_range(-1.0..=1.0);
        let linear = (0..total).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut pairs = BTreeMap::new();
        for k in 0..total {
            for l in k + 1..total {
                let include = density >= 1.0 || rng.gen::<f64>() < density;
                if include {
                    pairs.insert((k, l), rng.gen_range(-1.0..=1.0));
                }
            }
        }
        Self::new(space, GameKind::Multilinear { constant, linear, pairs })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn kind(&self) -> &GameKind {
        &self.kind
    }

    pub fn evaluate(&self, coalition: &Coalition) -> Result<f64> {
        if !self.space.contains(coalition) {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.value(coalition))
    }

    fn value(&self, s: &Coalition) -> f64 {
        match &self.kind {
            GameKind::Additive { coefficients } => s.iter().fold(0.0, |acc, k| acc + coefficients[k]),
            GameKind::PurePair { patch, token, amplitude } => {
                if s.contains(*patch) && s.contains(*token) {
                    *amplitude
                } else {
                    0.0
                }
            }
            GameKind::Multilinear { constant, linear, pairs } => {
                let mut v = *constant;
                for k in s.iter() {
                    v += linear[k];
                }
                for (&(k, l), &b) in pairs {
                    if s.contains(k) && s.contains(l) {
                        v += b;
                    }
                }
                v
            }
        }
    }

    /// Coefficient of the unordered pair `{a, b}` in the game's second-order
    /// structure (the constant second-order difference).
    fn pair_effect(&self, a: usize, b: usize) -> f64 {
        match &self.kind {
            GameKind::Additive { .. } => 0.0,
            GameKind::PurePair { patch, token, amplitude } => {
                if (a, b) == (*patch, *token) || (b, a) == (*patch, *token) {
                    *amplitude
                } else {
                    0.0
                }
            }
            GameKind::Multilinear { pairs, .. } => {
                pairs.get(&(a.min(b), a.max(b))).copied().unwrap_or(0.0)
            }
        }
    }

    /// Closed-form interaction index (half-normalized) of patch `patch` and
    /// token `token`, both given as global indices.
    pub fn closed_form_sii(&self, patch: usize, token: usize) -> Result<f64> {
        self.space.check_pair(patch, token)?;
        Ok(self.pair_effect(patch, token) / 2.0)
    }

    /// Closed-form Banzhaf interaction of `(patch, token)`.
    pub fn closed_form_banzhaf(&self, patch: usize, token: usize) -> Result<f64> {
        self.space.check_pair(patch, token)?;
        Ok(self.pair_effect(patch, token))
    }
}

impl Scorer for SyntheticGame {
    fn score(&mut self, coalitions: &[Coalition]) -> core::result::Result<Vec<f64>, ScoreError> {
        self.score_all(coalitions)
    }
}

impl SyntheticGame {
    /// Shared-reference scoring, for callers that evaluate concurrently.
    pub fn score_all(&self, coalitions: &[Coalition]) -> core::result::Result<Vec<f64>, ScoreError> {
        coalitions
            .iter()
            .map(|c| self.evaluate(c).map_err(|e| ScoreError::new(alloc::format!("{e}"))))
            .collect()
    }
}
