//! Hybrid text-tabular persona classification.
//!
//! The pipeline runs from raw timestamped posts to an explained classifier:
//!
//! * [`corpus`]: parsing, per-user filtering, user-atomic class balancing, user-disjoint splits
//! * [`textprep`]: normalization, bounded vocabulary, fixed-length token sequences
//! * [`context`]: late-night flags, lexicon hit counts, compound sentiment
//! * [`profiles`]: the per-user profile store with aggregation and persona write-back
//! * [`tabular`]: one-hot and Yeo-Johnson + standardization encoding
//! * [`model`]: small transformer text encoder, attention fusion and softmax head
//! * [`train`]: analytic gradients, optimizers, metrics, k-fold and significance
//! * [`explain`]: exact Shapley attribution and the correlation leakage check
//! * [`dataset`]: featurization of a corpus split into model-ready rows
//! * [`harness`]: TF-IDF, Gaussian NB and Gini decision-tree baselines, ablations
//! * [`synth`]: seeded synthetic corpora with text or context label signal
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the precision used by the command-line pipeline.

pub mod context;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod harness;
pub mod model;
pub mod profiles;
pub mod scalar;
pub mod synth;
pub mod tabular;
pub mod tensor;
pub mod textprep;
pub mod train;

pub mod escape;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model parameters in double precision (gradient checks, pipeline default).
pub type ModelParams64 = model::ModelParams<f64>;
/// Model parameters in single precision.
pub type ModelParams32 = model::ModelParams<f32>;
pub type FittedTransform64 = tabular::FittedTransform<f64>;
pub type FittedTransform32 = tabular::FittedTransform<f32>;
pub type TabularVector64 = tabular::TabularVector<f64>;
pub type TabularVector32 = tabular::TabularVector<f32>;
pub type Example64 = train::Example<f64>;
pub type Attribution64 = explain::Attribution<f64>;
pub type Dataset64 = dataset::Dataset<f64>;
