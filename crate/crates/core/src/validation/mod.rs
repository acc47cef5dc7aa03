//! Stratified k-fold cross-validation with per-fold undersampling, grid
//! search, and the confusion-matrix metrics plus ROC AUC.

mod folds;
mod metrics;
mod search;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::models::ModelError;

pub use folds::{stratified_kfold, FoldAssignment};
pub use metrics::{accuracy, f1, f1_from, precision, recall, roc_auc, specificity, ConfusionMatrix, Evaluation, Metrics};
pub use search::{
    confusion_at, cross_validate, evaluate_on_test, grid_search, CandidateResult, EvaluationReport, FoldResult,
    Prediction, TestEvaluation,
};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("ROC AUC needs both classes")]
    SingleClass,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores contain NaN")]
    NonFiniteScore,
    #[error("the search grid is empty")]
    EmptyGrid,
    #[error("fold assignment was built for a different dataset")]
    FoldMismatch,
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Data(#[from] DatasetError),
}
