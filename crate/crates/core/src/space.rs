//! The coalition universe: `m` patches followed by `n` tokens.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Textual,
}

/// Two feature groups sharing one index range: patches occupy `0..m`,
/// tokens occupy `m..m+n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct FeatureSpace {
    m: usize,
    n: usize,
    grid: Option<(usize, usize)>,
    token_labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    m: usize,
    n: usize,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    token_labels: Option<Vec<String>>,
}

impl TryFrom<RawSpace> for FeatureSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        let mut space = FeatureSpace::new(raw.m, raw.n)?;
        if let Some([rows, cols]) = raw.grid {
            space = space.with_grid(rows, cols)?;
        }
        if let Some(labels) = raw.token_labels {
            space = space.with_token_labels(labels)?;
        }
        Ok(space)
    }
}

impl From<FeatureSpace> for RawSpace {
    fn from(space: FeatureSpace) -> Self {
        RawSpace {
            m: space.m,
            n: space.n,
            grid: space.grid.map(|(r, c)| [r, c]),
            token_labels: space.token_labels,
        }
    }
}

impl FeatureSpace {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyGroup("patch"));
        }
        if n == 0 {
            return Err(Error::EmptyGroup("token"));
        }
        Ok(Self { m, n, grid: None, token_labels: None })
    }

    /// Builds a space whose patches tile a `grid_rows x grid_cols` grid.
    pub fn with_grid(mut self, grid_rows: usize, grid_cols: usize) -> Result<Self> {
        if grid_rows.checked_mul(grid_cols) != Some(self.m) {
            return Err(Error::GridMismatch { rows: grid_rows, cols: grid_cols, m: self.m });
        }
        self.grid = Some((grid_rows, grid_cols));
        Ok(self)
    }

    pub fn with_token_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::LabelMismatch { labels: labels.len(), n: self.n });
        }
        self.token_labels = Some(labels);
        Ok(self)
    }

    pub fn patches(&self) -> usize {
        self.m
    }

    pub fn tokens(&self) -> usize {
        self.n
    }

    /// Total number of features, `m + n`.
    pub fn total(&self) -> usize {
        self.m + self.n
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn token_labels(&self) -> Option<&[String]> {
        self.token_labels.as_deref()
    }

    /// Global feature index of token `j` (0-based within the token group).
    pub fn token_index(&self, j: usize) -> usize {
        self.m + j
    }

    pub fn modality(&self, index: usize) -> Option<Modality> {
        if index < self.m {
            Some(Modality::Visual)
        } else if index < self.total() {
            Some(Modality::Textual)
        } else {
            None
        }
    }

    /// Checks that `(patch, token)` are global indices of a patch and a token.
    pub fn check_pair(&self, patch: usize, token: usize) -> Result<()> {
        if patch < self.m && token >= self.m && token < self.total() {
            Ok(())
        } else {
            Err(Error::NotCrossModal { patch, token })
        }
    }

    /// Canonical coalition from arbitrary-order indices; duplicates collapse.
    pub fn coalition(&self, indices: &[usize]) -> Result<Coalition> {
        self.build(indices, false)
    }

    /// Like [`FeatureSpace::coalition`] but rejects duplicate indices.
    pub fn coalition_strict(&self, indices: &[usize]) -> Result<Coalition> {
        self.build(indices, true)
    }

    fn build(&self, indices: &[usize], strict: bool) -> Result<Coalition> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        for (k, &index) in sorted.iter().enumerate() {
            if index >= self.total() {
                return Err(Error::IndexOutOfRange { index, total: self.total() });
            }
            if strict && k > 0 && sorted[k - 1] == index {
                return Err(Error::DuplicateIndex(index));
            }
        }
        sorted.dedup();
        Ok(Coalition::from_sorted(sorted))
    }

    pub fn full(&self) -> Coalition {
        Coalition::from_sorted((0..self.total()).collect())
    }

    pub fn contains(&self, coalition: &Coalition) -> bool {
        coalition.max_index().is_none_or(|k| k < self.total())
    }

    /// Splits a coalition into its patch part and its token part.
    pub fn split_by_modality(&self, coalition: &Coalition) -> Result<(Coalition, Coalition)> {
        if !self.contains(coalition) {
            return Err(Error::SpaceMismatch);
        }
        let (visual, textual): (Vec<usize>, Vec<usize>) =
            coalition.iter().partition(|&k| k < self.m);
        Ok((Coalition::from_sorted(visual), Coalition::from_sorted(textual)))
    }
}

/// A set of present features.
///
/// Sets whose members are all below 64 are stored as a bitmask; anything
/// wider falls back to a sorted index list. The representation is a pure
/// function of the member set, so derived equality, ordering and hashing
/// are set semantics.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(Repr);

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Repr {
    Mask(u64),
    Sorted(Vec<usize>),
}

impl Coalition {
    pub const fn empty() -> Self {
        Coalition(Repr::Mask(0))
    }

    pub const fn from_mask(mask: u64) -> Self {
        Coalition(Repr::Mask(mask))
    }

    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        match indices.last() {
            Some(&last) if last >= 64 => Coalition(Repr::Sorted(indices)),
            _ => Coalition(Repr::Mask(indices.iter().fold(0u64, |acc, &k| acc | 1 << k))),
        }
    }

    /// Bitmask form, available when every member is below 64.
    pub fn mask(&self) -> Option<u64> {
        match self.0 {
            Repr::Mask(mask) => Some(mask),
            Repr::Sorted(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match &self.0 {
            Repr::Mask(mask) => mask.count_ones() as usize,
            Repr::Sorted(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        match &self.0 {
            Repr::Mask(mask) => index < 64 && mask >> index & 1 == 1,
            Repr::Sorted(v) => v.binary_search(&index).is_ok(),
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        match &self.0 {
            Repr::Mask(0) => None,
            Repr::Mask(mask) => Some(63 - mask.leading_zeros() as usize),
            Repr::Sorted(v) => v.last().copied(),
        }
    }

    /// Members in ascending order.
    pub fn iter(&self) -> Members<'_> {
        match &self.0 {
            Repr::Mask(mask) => Members::Mask(*mask),
            Repr::Sorted(v) => Members::Sorted(v.iter()),
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// This coalition with `index` added.
    pub fn with(&self, index: usize) -> Coalition {
        match &self.0 {
            Repr::Mask(mask) if index < 64 => Coalition(Repr::Mask(mask | 1 << index)),
            _ => {
                let mut v = self.to_vec();
                if let Err(pos) = v.binary_search(&index) {
                    v.insert(pos, index);
                }
                Coalition::from_sorted(v)
            }
        }
    }

    pub fn with_pair(&self, a: usize, b: usize) -> Coalition {
        self.with(a).with(b)
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

pub enum Members<'a> {
    Mask(u64),
    Sorted(core::slice::Iter<'a, usize>),
}

impl Iterator for Members<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Members::Mask(0) => None,
            Members::Mask(mask) => {
                let k = mask.trailing_zeros() as usize;
                *mask &= *mask - 1;
                Some(k)
            }
            Members::Sorted(it) => it.next().copied(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn make_space_totals() {
        let s = FeatureSpace::new(49, 12).unwrap().with_grid(7, 7).unwrap();
        assert_eq!(s.total(), 61);
        assert_eq!(FeatureSpace::new(1, 1).unwrap().with_grid(1, 1).unwrap().total(), 2);
        assert_eq!(FeatureSpace::new(4, 4).unwrap().with_grid(2, 2).unwrap().total(), 8);
    }

    #[test]
    fn make_space_rejects_bad_input() {
        assert_eq!(FeatureSpace::new(0, 3), Err(Error::EmptyGroup("patch")));
        assert_eq!(FeatureSpace::new(3, 0), Err(Error::EmptyGroup("token")));
        assert!(matches!(
            FeatureSpace::new(4, 2).unwrap().with_grid(3, 3),
            Err(Error::GridMismatch { .. })
        ));
        assert!(FeatureSpace::new(2, 2).unwrap().with_token_labels(vec!["a".into()]).is_err());
    }

    #[test]
    fn coalition_examples() {
        let s = FeatureSpace::new(2, 2).unwrap();
        let c = s.coalition(&[0, 2]).unwrap();
        assert_eq!(c.to_vec(), vec![0, 2]);
        assert_eq!(c.len(), 2);
        assert!(s.coalition(&[]).unwrap().is_empty());
        assert_eq!(s.coalition(&[3, 1]).unwrap(), s.coalition(&[1, 3]).unwrap());
        assert_eq!(
            s.coalition(&[4]),
            Err(Error::IndexOutOfRange { index: 4, total: 4 })
        );
        assert_eq!(s.coalition_strict(&[1, 1]), Err(Error::DuplicateIndex(1)));
        assert_eq!(s.coalition(&[1, 1]).unwrap().len(), 1);
    }

    #[test]
    fn split_examples() {
        let s = FeatureSpace::new(2, 2).unwrap();
        let split = |ix: &[usize]| {
            let (v, t) = s.split_by_modality(&s.coalition(ix).unwrap()).unwrap();
            (v.to_vec(), t.to_vec())
        };
        assert_eq!(split(&[0, 3]), (vec![0], vec![3]));
        assert_eq!(split(&[]), (vec![], vec![]));
        assert_eq!(split(&[0, 1, 2, 3]), (vec![0, 1], vec![2, 3]));
    }

    #[test]
    fn wide_coalitions_use_sorted_form() {
        let s = FeatureSpace::new(60, 10).unwrap();
        let c = s.coalition(&[69, 3, 64]).unwrap();
        assert_eq!(c.mask(), None);
        assert_eq!(c.to_vec(), vec![3, 64, 69]);
        assert!(c.contains(64) && !c.contains(65));
        assert_eq!(c.with(65).len(), 4);
        // same members built through `with` compare equal
        let d = Coalition::empty().with(64).with(3).with(69);
        assert_eq!(c, d);
        assert_eq!(s.coalition(&[3, 5]).unwrap().mask(), Some(0b101000));
    }
}
