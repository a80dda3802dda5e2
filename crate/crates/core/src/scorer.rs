use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::space::Coalition;

/// Failure reported by a scorer backend (transport, protocol, or model).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ScoreError(pub String);

impl ScoreError {
    pub fn new(msg: impl Into<String>) -> Self {
        ScoreError(msg.into())
    }
}

/// A black-box value function `v(S)` queried with coalitions of present
/// features.
///
/// Responses must be pure functions of the coalition. `score` returns one
/// value per coalition, positionally aligned with the input.
pub trait Scorer {
    fn score(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for &mut S {
    fn score(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>, ScoreError> {
        (**self).score(coalitions)
    }
}

/// Adapts a per-coalition closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: FnMut(&Coalition) -> f64> Scorer for FnScorer<F> {
    fn score(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>, ScoreError> {
        Ok(coalitions.iter().map(&mut self.0).collect())
    }
}

/// Cosine similarity of a visual and a textual embedding, for scorers that
/// report embeddings instead of a fused scalar.
pub fn cosine_score(visual: &[f64], textual: &[f64]) -> Result<f64> {
    if visual.len() != textual.len() || visual.is_empty() {
        return Err(Error::ShapeMismatch { expected: visual.len(), got: textual.len() });
    }
    let dot: f64 = visual.iter().zip(textual).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let (nv, nt) = (norm(visual), norm(textual));
    if nv == 0.0 || nt == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (nv * nt)).clamp(-1.0, 1.0))
}

/// Scores a batch, checking alignment and finiteness. `evals` counts
/// coalitions successfully sent so far and is reported on failure.
pub(crate) fn checked_scores<S: Scorer + ?Sized>(
    scorer: &mut S,
    coalitions: &[Coalition],
    evals: &mut u64,
) -> Result<Vec<f64>> {
    let scores = scorer
        .score(coalitions)
        .map_err(|source| Error::Scorer { source, evals_used: *evals })?;
    if scores.len() != coalitions.len() {
        return Err(Error::Scorer {
            source: ScoreError::new(format!(
                "scorer returned {} scores for {} coalitions",
                scores.len(),
                coalitions.len()
            )),
            evals_used: *evals,
        });
    }
    *evals += coalitions.len() as u64;
    for (c, &value) in coalitions.iter().zip(&scores) {
        if !value.is_finite() {
            return Err(Error::NonFinite { coalition: c.to_vec(), value });
        }
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, 2.0, 2.0], &[2.0, 4.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm));
        assert!(cosine_score(&[1.0], &[1.0, 0.0]).is_err());
    }
}
