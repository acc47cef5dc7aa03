//! The eight classifier families and their uniform fit/score interface.

mod boosting;
mod cart;
mod impurity;
mod linear;
mod mlp;
mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};

pub use boosting::{fit_gradient_boosting, fit_leafwise_boosting, fit_second_order_boosting, BinMapper};
pub use cart::{fit_decision_tree, fit_random_forest};
pub use impurity::{entropy_impurity, gini_impurity};
pub use linear::{fit_logistic_regression, LinearModel};
pub use mlp::{fit_mlp, Activation, MlpModel};
pub use svm::{fit_svm, Kernel, SvmModel};
pub use tree::{Node, Tree, TreeEnsemble};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid probability vector {0:?}")]
    InvalidProbabilities(Vec<f64>),
    #[error("hyperparameter `{name}` is not an axis of {family}")]
    UnknownHyperparameter { family: Family, name: String },
    #[error("hyperparameter `{name}`: {reason}")]
    BadHyperparameter { name: String, reason: String },
    #[error("row width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{family} did not converge within {iterations} iterations (final gradient norm {gradient_norm:e})")]
    NotConverged {
        family: Family,
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training data: {0}")]
    Data(#[from] DatasetError),
    #[error("training data has no rows")]
    EmptyTrainingSet,
    #[error("{0}")]
    Unsupported(String),
    #[error("model document: {0}")]
    Json(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LogisticRegression,
    DecisionTree,
    RandomForest,
    GradientBoosting,
    SecondOrderBoosting,
    LeafwiseBoosting,
    Svm,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::LogisticRegression,
        Family::DecisionTree,
        Family::RandomForest,
        Family::GradientBoosting,
        Family::Svm,
        Family::SecondOrderBoosting,
        Family::Mlp,
        Family::LeafwiseBoosting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LogisticRegression => "logistic-regression",
            Family::DecisionTree => "decision-tree",
            Family::RandomForest => "random-forest",
            Family::GradientBoosting => "gradient-boosting",
            Family::SecondOrderBoosting => "second-order-boosting",
            Family::LeafwiseBoosting => "leafwise-boosting",
            Family::Svm => "svm",
            Family::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn is_tree_based(self) -> bool {
        matches!(
            self,
            Family::DecisionTree
                | Family::RandomForest
                | Family::GradientBoosting
                | Family::SecondOrderBoosting
                | Family::LeafwiseBoosting
        )
    }

    pub fn is_boosting(self) -> bool {
        matches!(
            self,
            Family::GradientBoosting | Family::SecondOrderBoosting | Family::LeafwiseBoosting
        )
    }

    /// Axes searched by default.
    pub fn grid_axes(self) -> &'static [&'static str] {
        match self {
            Family::LogisticRegression => &["penalty", "C"],
            Family::DecisionTree => &["criterion", "max_depth"],
            Family::RandomForest => &["n_estimators", "max_depth"],
            Family::GradientBoosting | Family::SecondOrderBoosting | Family::LeafwiseBoosting => {
                &["n_estimators", "learning_rate"]
            }
            Family::Svm => &["kernel", "C"],
            Family::Mlp => &["hidden_layer_sizes", "activation"],
        }
    }

    /// Additional tunables with documented defaults.
    pub fn extension_axes(self) -> &'static [&'static str] {
        match self {
            Family::LogisticRegression => &["tol", "max_iter"],
            Family::DecisionTree => &["min_samples_leaf"],
            Family::RandomForest => &["criterion", "min_samples_leaf", "bootstrap", "max_features"],
            Family::GradientBoosting => &["max_depth", "min_samples_leaf"],
            Family::SecondOrderBoosting => &["max_depth", "lambda", "min_child_weight"],
            Family::LeafwiseBoosting => &["num_leaves", "max_bins", "lambda", "min_data_in_leaf", "min_child_weight"],
            Family::Svm => &["gamma", "tol", "max_iter"],
            Family::Mlp => &["learning_rate_init", "batch_size", "max_epochs", "patience", "tol", "alpha"],
        }
    }

    /// The search grid used when a configuration does not override it.
    pub fn default_grid(self) -> Grid {
        use HyperValue::*;
        let f = |v: &[f64]| v.iter().map(|&x| Float(x)).collect::<Vec<_>>();
        let t = |v: &[&str]| v.iter().map(|s| Text(s.to_string())).collect::<Vec<_>>();
        let depths = vec![Null, Int(5), Int(10)];
        let estimators = vec![Int(50), Int(100), Int(200)];
        let axes = match self {
            Family::LogisticRegression => vec![("penalty", t(&["l1", "l2"])), ("C", f(&[0.1, 1.0, 10.0]))],
            Family::DecisionTree => vec![("criterion", t(&["gini", "entropy"])), ("max_depth", depths)],
            Family::RandomForest => vec![("n_estimators", estimators), ("max_depth", depths)],
            Family::GradientBoosting | Family::SecondOrderBoosting | Family::LeafwiseBoosting => vec![
                ("n_estimators", estimators),
                ("learning_rate", f(&[0.1, 0.01, 0.001])),
            ],
            Family::Svm => vec![("kernel", t(&["linear", "rbf"])), ("C", f(&[0.1, 1.0, 10.0]))],
            Family::Mlp => vec![
                (
                    "hidden_layer_sizes",
                    vec![Sizes(vec![100]), Sizes(vec![50, 50]), Sizes(vec![100, 50, 25])],
                ),
                ("activation", t(&["relu", "tanh", "logistic"])),
            ],
        };
        Grid {
            axes: axes.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One hyperparameter value. `Null` stands for "unbounded" (e.g. no depth limit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Sizes(Vec<usize>),
}

impl HyperValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            HyperValue::Int(v) => Some(v as f64),
            HyperValue::Float(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Null => f.write_str("None"),
            HyperValue::Bool(b) => write!(f, "{b}"),
            HyperValue::Int(v) => write!(f, "{v}"),
            HyperValue::Float(v) => write!(f, "{v}"),
            HyperValue::Text(s) => f.write_str(s),
            HyperValue::Sizes(s) => {
                let parts: Vec<String> = s.iter().map(usize::to_string).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

/// Ordered search axes; the Cartesian product varies the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<(String, Vec<HyperValue>)>,
}

impl Grid {
    pub fn single(hyper: BTreeMap<String, HyperValue>) -> Grid {
        Grid {
            axes: hyper.into_iter().map(|(k, v)| (k, vec![v])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<BTreeMap<String, HyperValue>> {
        let mut out = vec![BTreeMap::new()];
        for (name, values) in &self.axes {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for partial in &out {
                for v in values {
                    let mut p = partial.clone();
                    p.insert(name.clone(), v.clone());
                    next.push(p);
                }
            }
            out = next;
        }
        if self.axes.is_empty() {
            Vec::new()
        } else {
            out
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, HyperValue>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            hyperparameters: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: HyperValue) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for name in self.hyperparameters.keys() {
            let known = self.family.grid_axes().contains(&name.as_str())
                || self.family.extension_axes().contains(&name.as_str());
            if !known {
                return Err(ModelError::UnknownHyperparameter {
                    family: self.family,
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Compact `name=value` rendering in key order.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .hyperparameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        parts.join(" ")
    }

    fn bad(name: &str, reason: impl Into<String>) -> ModelError {
        ModelError::BadHyperparameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn f64_or(&self, name: &str, default: f64) -> Result<f64, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Self::bad(name, format!("expected a number, got {v}"))),
        }
    }

    pub(crate) fn usize_or(&self, name: &str, default: usize) -> Result<usize, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Int(v)) if *v >= 0 => Ok(*v as usize),
            Some(v) => Err(Self::bad(name, format!("expected a non-negative integer, got {v}"))),
        }
    }

    /// `Null` maps to `None`.
    pub(crate) fn opt_usize_or(&self, name: &str, default: Option<usize>) -> Result<Option<usize>, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Null) => Ok(None),
            Some(HyperValue::Int(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(v) => Err(Self::bad(name, format!("expected a non-negative integer or None, got {v}"))),
        }
    }

    pub(crate) fn text_or<'a>(&'a self, name: &str, default: &'a str) -> Result<&'a str, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Text(s)) => Ok(s),
            Some(v) => Err(Self::bad(name, format!("expected text, got {v}"))),
        }
    }

    pub(crate) fn bool_or(&self, name: &str, default: bool) -> Result<bool, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Bool(b)) => Ok(*b),
            Some(v) => Err(Self::bad(name, format!("expected true/false, got {v}"))),
        }
    }

    pub(crate) fn sizes_or(&self, name: &str, default: &[usize]) -> Result<Vec<usize>, ModelError> {
        match self.hyperparameters.get(name) {
            None => Ok(default.to_vec()),
            Some(HyperValue::Sizes(s)) => Ok(s.clone()),
            Some(HyperValue::Int(v)) if *v > 0 => Ok(vec![*v as usize]),
            Some(v) => Err(Self::bad(name, format!("expected a list of layer sizes, got {v}"))),
        }
    }
}

/// Maps the attribution-space output to the reported score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logistic,
}

impl Link {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            Link::Identity => raw,
            Link::Logistic => sigmoid(raw),
        }
    }
}

/// Whether scores are probabilities (threshold 0.5) or signed margins
/// (threshold 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Probability,
    Margin,
}

impl ScoreKind {
    pub fn threshold(self) -> f64 {
        match self {
            ScoreKind::Probability => 0.5,
            ScoreKind::Margin => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Parameters {
    Linear(LinearModel),
    Trees(TreeEnsemble),
    Svm(SvmModel),
    Mlp(MlpModel),
}

/// A trained, immutable predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub config: ModelConfig,
    pub feature_width: usize,
    pub score_kind: ScoreKind,
    pub link: Link,
    pub parameters: Parameters,
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn threshold(&self) -> f64 {
        self.score_kind.threshold()
    }

    fn check_width(&self, row: &[f64]) -> Result<(), ModelError> {
        if row.len() != self.feature_width {
            return Err(ModelError::WidthMismatch {
                expected: self.feature_width,
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Output in attribution space: log-odds for linear models, boosting and
    /// the MLP; the margin for the SVM; the class fraction for single trees
    /// and forests.
    pub fn raw_output(&self, row: &[f64]) -> Result<f64, ModelError> {
        self.check_width(row)?;
        Ok(self.raw_unchecked(row))
    }

    pub(crate) fn raw_unchecked(&self, row: &[f64]) -> f64 {
        match &self.parameters {
            Parameters::Linear(m) => m.margin(row),
            Parameters::Trees(e) => e.raw(row),
            Parameters::Svm(m) => m.decision(row),
            Parameters::Mlp(m) => m.logit(row),
        }
    }

    pub fn score(&self, row: &[f64]) -> Result<f64, ModelError> {
        Ok(self.link.apply(self.raw_output(row)?))
    }

    pub fn predict(&self, row: &[f64]) -> Result<u8, ModelError> {
        Ok(u8::from(self.score(row)? >= self.threshold()))
    }

    pub fn score_batch(&self, ds: &Dataset) -> Result<Vec<f64>, ModelError> {
        if ds.n_cols() != self.feature_width {
            return Err(ModelError::WidthMismatch {
                expected: self.feature_width,
                got: ds.n_cols(),
            });
        }
        Ok(ds.rows().map(|r| self.link.apply(self.raw_unchecked(r))).collect())
    }

    pub fn predict_batch(&self, ds: &Dataset) -> Result<Vec<u8>, ModelError> {
        let t = self.threshold();
        Ok(self.score_batch(ds)?.into_iter().map(|s| u8::from(s >= t)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<FittedModel, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))
    }

    /// Linear weights and intercept when the model is linear in its inputs.
    pub fn linear_form(&self) -> Option<(Vec<f64>, f64)> {
        match &self.parameters {
            Parameters::Linear(m) => Some(m.dense_weights(self.feature_width)),
            Parameters::Svm(m) => m.linear_weights(),
            _ => None,
        }
    }

    pub fn tree_ensemble(&self) -> Option<&TreeEnsemble> {
        match &self.parameters {
            Parameters::Trees(e) => Some(e),
            _ => None,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits any family from its configuration.
pub fn fit(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    match config.family {
        Family::LogisticRegression => fit_logistic_regression(train, config),
        Family::DecisionTree => fit_decision_tree(train, config),
        Family::RandomForest => fit_random_forest(train, config),
        Family::GradientBoosting => fit_gradient_boosting(train, config),
        Family::SecondOrderBoosting => fit_second_order_boosting(train, config),
        Family::LeafwiseBoosting => fit_leafwise_boosting(train, config),
        Family::Svm => fit_svm(train, config),
        Family::Mlp => fit_mlp(train, config),
    }
}

/// Validated training inputs: features, targets as `0.0/1.0`.
pub(crate) struct TrainingData<'a> {
    pub x: tree::Matrix<'a>,
    pub y: Vec<f64>,
}

impl<'a> TrainingData<'a> {
    pub fn new(train: &'a Dataset, config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let target = train.require_target()?;
        if train.n_rows() == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        if train.values().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Data(DatasetError::Shape(
                "training matrix contains missing or non-finite cells".into(),
            )));
        }
        Ok(Self {
            x: tree::Matrix::new(train.values(), train.n_rows(), train.n_cols()),
            y: target.iter().map(|&t| f64::from(t)).collect(),
        })
    }

    pub fn positive_rate(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }
}
