//! Individual-fairness testing for black-box classifiers.
//!
//! Seeds are picked where a local surrogate explanation ranks a
//! protected-attribute-related position highly; a genetic search then
//! maximises the probability gap between protected-value variants and
//! collects every input whose variants receive different labels.

pub mod data;
pub mod engine;
pub mod error;
pub mod explain;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod records;
pub mod retrain;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    dedupe_key, DiscriminatoryRecord, Explanation, ExplanationEntry, FeatureKind, FeatureSchema, FeatureSpec,
    Individual, Origin, Population, RunMetrics, Sample, SchemaMode, SeedScope, Value,
};
