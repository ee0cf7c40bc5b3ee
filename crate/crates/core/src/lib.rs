//! Rank-aware aggregation of post-hoc feature-attribution explanations.
//!
//! Given several explainers' ranked, signed attribution lists for one
//! prediction, this crate measures how much they disagree (feature, rank
//! and sign agreement over the top-k) and reconciles them into one top-k
//! explanation with a full stage trace.
//!
//! ```
//! use xmentor::{aggregate, fixtures, AggregationConfig};
//!
//! let result = aggregate(&fixtures::table1(), &AggregationConfig::default()).unwrap();
//! assert_eq!(result.feature_names(), ["F1", "F3", "F2", "F5", "F6"]);
//! ```

pub mod aggregate;
pub mod cli;
pub mod fixtures;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod synth;

pub use aggregate::{aggregate, threshold_k, AggregateError};
pub use metrics::{
    disagreement_counts, feature_agreement, pair_metrics, rank_agreement, sign_agreement,
    PairMetrics,
};
pub use model::{
    derive_sign, validate, AggregatedExplanation, AggregationConfig, Explanation, ExplanationSet,
    FeatureAttribution, Prediction, Sign,
};
