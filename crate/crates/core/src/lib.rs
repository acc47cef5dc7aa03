//! Interpretable binary classification of tabular assessment data.
//!
//! The crate is split by pipeline stage:
//!
//! * [`dataset`] ingests survey CSV files and applies the preprocessing chain
//!   (missing-row pruning, plausible-value averaging, level binning, one-hot
//!   encoding, min-max scaling, a Gaussian noise control column, stratified
//!   splitting and undersampling).
//! * [`models`] holds the eight classifier families behind one fit/score
//!   interface.
//! * [`validation`] runs stratified k-fold grid search and computes the
//!   confusion-matrix metrics and ROC AUC.
//! * [`attribution`] computes interventional Shapley values (exact, kernel,
//!   linear and tree variants) and the ranking/plot data built on them.

pub mod attribution;
pub mod dataset;
pub mod models;
pub mod rng;
pub mod validation;

pub use dataset::{Category, Dataset, LevelLabel, VariableKind, VariableSpec};
pub use models::{Family, FittedModel, ModelConfig};
