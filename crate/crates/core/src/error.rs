use alloc::vec::Vec;

use crate::scorer::ScoreError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("the {0} group must contain at least one feature")]
    EmptyGroup(&'static str),
    #[error("grid {rows}x{cols} does not tile {m} patches")]
    GridMismatch { rows: usize, cols: usize, m: usize },
    #[error("{labels} token labels supplied for {n} tokens")]
    LabelMismatch { labels: usize, n: usize },
    #[error("feature index {index} outside universe of {total} features")]
    IndexOutOfRange { index: usize, total: usize },
    #[error("duplicate feature index {0}")]
    DuplicateIndex(usize),
    #[error("({patch}, {token}) is not a patch-token pair")]
    NotCrossModal { patch: usize, token: usize },
    #[error("feature {0} is already present in the coalition")]
    FeaturePresent(usize),
    #[error("coalition size {size} outside 0..={max}")]
    SizeOutOfRange { size: usize, max: usize },
    #[error("universe of {total} features exceeds the exhaustive limit of {limit}")]
    TooLarge { total: usize, limit: usize },
    #[error("density {0} outside (0, 1]")]
    InvalidDensity(f64),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("coalition refers to a different feature space")]
    SpaceMismatch,
    #[error("scorer failed after {evals_used} evaluations: {source}")]
    Scorer { source: ScoreError, evals_used: u64 },
    #[error("non-finite score {value} for coalition {coalition:?}")]
    NonFinite { coalition: Vec<usize>, value: f64 },
    #[error("{missing} of {total} interaction cells have no evidence")]
    MissingCells { missing: usize, total: usize },
    #[error("matrix has no cells with evidence")]
    AllMissing,
    #[error("patch row {0} has no cells with evidence")]
    EmptyRow(usize),
    #[error("no sample has a defined synergy ratio")]
    NoDefinedRatio,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("{got} values do not match {expected} grid cells")]
    ShapeMismatch { expected: usize, got: usize },
}
