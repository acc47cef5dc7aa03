//! Interventional Shapley values.
//!
//! The value of a coalition `S` for a query row `x` is the model output
//! averaged over background rows whose `S` columns are replaced by `x`'s.
//! Attributions are taken on the model's raw output: log-odds for logistic
//! models and boosting, the margin for the SVM, the leaf fraction for single
//! trees and forests. Every estimator here targets that same value function.

mod exact;
mod kernel;
mod summary;
mod tree;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Family, FittedModel, Kernel, Parameters};
use crate::rng;

pub use exact::{exact_shapley, EXACT_CAP};
pub use kernel::{default_budget, kernel_shap};
pub use summary::{decision_plot_data, rank_instances, summary_plot_data, AttributionSummary, InstanceTotal, PlotData, PlotEntry, PlotKind};
pub use tree::tree_shap;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("row width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("{features} features exceed the exact enumeration cap of {cap}; use kernel_shap")]
    TooManyFeatures { features: usize, cap: usize },
    #[error("coalition budget {budget} is below the minimum {minimum}")]
    BudgetTooSmall { budget: usize, minimum: usize },
    #[error("kernel regression design is singular; increase the coalition budget")]
    SingularDesign,
    #[error("{method} does not apply to {family}")]
    Unsupported { method: Method, family: Family },
    #[error("{0}")]
    Misaligned(String),
}

/// Anything that maps a feature row to a real output.
pub trait ScoreFn: Sync {
    fn width(&self) -> usize;
    fn eval(&self, row: &[f64]) -> f64;
}

impl ScoreFn for FittedModel {
    fn width(&self) -> usize {
        self.feature_width
    }

    /// The raw (attribution-space) output.
    fn eval(&self, row: &[f64]) -> f64 {
        self.raw_unchecked(row)
    }
}

/// Wraps a closure as a model.
pub struct FnModel<F> {
    pub width: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScoreFn for FnModel<F> {
    fn width(&self) -> usize {
        self.width
    }

    fn eval(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// Reference rows standing in for the intervention distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    width: usize,
    rows: Vec<f64>,
    row_ids: Vec<usize>,
}

impl BackgroundSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, AttributionError> {
        let width = rows.first().ok_or(AttributionError::EmptyBackground)?.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(AttributionError::WidthMismatch {
                expected: width,
                got: bad.len(),
            });
        }
        let row_ids = (0..rows.len()).collect();
        Ok(Self {
            width,
            rows: rows.concat(),
            row_ids,
        })
    }

    /// Up to `size` rows drawn without replacement by `seed`, kept in dataset
    /// order. All rows when the dataset is no larger than `size`.
    pub fn sample(ds: &crate::Dataset, size: usize, seed: u64) -> Result<Self, AttributionError> {
        if ds.n_rows() == 0 || size == 0 {
            return Err(AttributionError::EmptyBackground);
        }
        let mut pick: Vec<usize> = if ds.n_rows() <= size {
            (0..ds.n_rows()).collect()
        } else {
            index::sample(&mut rng::seeded(rng::derive_seed(seed, &[0xb6])), ds.n_rows(), size).into_vec()
        };
        pick.sort_unstable();
        let mut rows = Vec::with_capacity(pick.len() * ds.n_cols());
        for &p in &pick {
            rows.extend_from_slice(ds.row(p));
        }
        Ok(Self {
            width: ds.n_cols(),
            rows,
            row_ids: pick.iter().map(|&p| ds.row_ids()[p]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.width..(j + 1) * self.width]
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.width)
            .map(|f| (0..self.len()).map(|j| self.row(j)[f]).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Kernel,
    Linear,
    Tree,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Kernel => "kernel",
            Method::Linear => "linear",
            Method::Tree => "tree",
        })
    }
}

impl Method {
    /// Tree SHAP for tree ensembles, Linear SHAP for linear models, Kernel
    /// SHAP otherwise.
    pub fn for_model(model: &FittedModel) -> Method {
        match &model.parameters {
            Parameters::Trees(_) => Method::Tree,
            Parameters::Linear(_) => Method::Linear,
            Parameters::Svm(s) if s.kernel == Kernel::Linear => Method::Linear,
            _ => Method::Kernel,
        }
    }
}

/// Shapley values of one query row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub instance_id: Option<usize>,
    pub method: Method,
    pub values: Vec<f64>,
    /// Mean raw output over the background set.
    pub baseline: f64,
    /// Raw output at the query row.
    pub prediction: f64,
    /// `|Σφ + baseline − prediction|`.
    pub residual: f64,
    /// Weighted RMS error of the kernel regression, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<f64>,
}

impl Attribution {
    pub(crate) fn new(method: Method, values: Vec<f64>, baseline: f64, prediction: f64) -> Self {
        let residual = (values.iter().sum::<f64>() + baseline - prediction).abs();
        Self {
            instance_id: None,
            method,
            values,
            baseline,
            prediction,
            residual,
            fit_error: None,
        }
    }

    pub fn with_instance(mut self, id: usize) -> Self {
        self.instance_id = Some(id);
        self
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub(crate) fn check_width(model: &dyn ScoreFn, x: &[f64], bg: &BackgroundSet) -> Result<(), AttributionError> {
    let expected = model.width();
    for got in [x.len(), bg.width()] {
        if got != expected {
            return Err(AttributionError::WidthMismatch { expected, got });
        }
    }
    if bg.is_empty() {
        return Err(AttributionError::EmptyBackground);
    }
    Ok(())
}

/// Mean output over background rows with the `in_s` columns taken from `x`.
pub(crate) fn coalition_value(model: &dyn ScoreFn, x: &[f64], in_s: &[bool], bg: &BackgroundSet, buf: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for j in 0..bg.len() {
        buf.clear();
        buf.extend(bg.row(j).iter().zip(x).zip(in_s).map(|((&b, &xv), &s)| if s { xv } else { b }));
        total += model.eval(buf);
    }
    total / bg.len() as f64
}

/// `(1/N) Σ_j f(x_S, bg_j,S̄)` for the feature subset `subset`.
pub fn interventional_value(model: &dyn ScoreFn, x: &[f64], subset: &[usize], bg: &BackgroundSet) -> Result<f64, AttributionError> {
    check_width(model, x, bg)?;
    let mut in_s = vec![false; x.len()];
    for &i in subset {
        if i >= x.len() {
            return Err(AttributionError::Misaligned(format!("feature index {i} out of range")));
        }
        in_s[i] = true;
    }
    Ok(coalition_value(model, x, &in_s, bg, &mut Vec::with_capacity(x.len())))
}

/// `φ_i = w_i (x_i − mean_i)` on the linear score.
pub fn linear_shap(model: &FittedModel, x: &[f64], bg: &BackgroundSet) -> Result<Attribution, AttributionError> {
    check_width(model, x, bg)?;
    let (w, b) = model.linear_form().ok_or(AttributionError::Unsupported {
        method: Method::Linear,
        family: model.family(),
    })?;
    let means = bg.column_means();
    let values: Vec<f64> = w.iter().zip(x).zip(&means).map(|((w, x), m)| w * (x - m)).collect();
    let baseline = b + w.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    Ok(Attribution::new(Method::Linear, values, baseline, model.raw_unchecked(x)))
}

/// Dispatches to `method`; `budget` and `seed` apply to Kernel SHAP only.
pub fn explain(
    model: &FittedModel,
    method: Method,
    x: &[f64],
    bg: &BackgroundSet,
    budget: usize,
    seed: u64,
) -> Result<Attribution, AttributionError> {
    match method {
        Method::Exact => exact_shapley(model, x, bg),
        Method::Kernel => kernel_shap(model, x, bg, budget, seed),
        Method::Linear => linear_shap(model, x, bg),
        Method::Tree => tree_shap(model, x, bg),
    }
}
