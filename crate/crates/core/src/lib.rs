//! Cross-modal interaction attribution for two-group cooperative games.
//!
//! Features are split into `m` visual patches (indices `0..m`) and `n`
//! textual tokens (indices `m..m+n`). A black-box [`Scorer`] maps a
//! [`Coalition`] of present features to a scalar; this crate estimates the
//! patch-token interaction matrix from those scores, computes exact
//! enumeration oracles for small universes, summarizes matrices into
//! synergy/suppression metrics, and rasterizes heatmaps.
//!
//! The crate is `no_std` with `alloc`; IO, transports and file formats live
//! in the companion `multishap` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimator;
pub mod exact;
pub mod game;
pub mod heatmap;
pub mod matrix;
pub mod metrics;
pub mod sampling;
pub mod scorer;
pub mod space;

pub use error::{Error, Result};
pub use estimator::{
    estimate, estimate_with_records, second_order_delta, standard_errors, DeltaRecord,
    EstimatorConfig, InteractionEstimate, Mode,
};
pub use exact::{
    exact_banzhaf, exact_shapley_value, exact_sii, shapley_weight, sii_weight, ExactOracle,
    Normalization, SiiWeightTable, DEFAULT_EXHAUSTIVE_LIMIT,
};
pub use game::{GameKind, SyntheticGame};
pub use matrix::CellMatrix;
pub use metrics::{
    classify_interaction, dataset_metrics, instance_metrics, mean_std, DatasetMetrics, InstanceMetrics,
    InteractionType, SeedSummary,
};
pub use scorer::{cosine_score, FnScorer, ScoreError, Scorer};
pub use space::{Coalition, FeatureSpace, Modality};
