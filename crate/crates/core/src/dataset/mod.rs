//! Schema-tagged feature matrices and the preprocessing chain applied to them.

mod io;
mod levels;
mod sampling;
pub mod synthetic;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{format_float, load_csv, read_dataset, write_dataset, LoadOptions};
pub use levels::{bin_levels, Category, LevelLabel, LEVEL_CUTOFFS};
pub use sampling::{split_train_test, undersample};
pub use transform::{
    add_noise_control, average_plausible_values, missing_histogram, normalize_scalars,
    one_hot_encode, prune_missing, ScalarNormalizer, NOISE_COLUMN, PLAUSIBLE_VALUE_COUNT,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("column `{0}` declared in the schema is missing from the file")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{text}`")]
    Parse {
        row: usize,
        column: String,
        text: String,
    },
    #[error("row {row}, column `{column}`: value {value} outside the valid range [{lo}, {hi}]")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("row {row}, column `{column}`: `{text}` is not in the declared category set")]
    UnknownCategory {
        row: usize,
        column: String,
        text: String,
    },
    #[error("column `{0}` has no declared category set")]
    NotCategorical(String),
    #[error("every row has at least one missing cell; nothing left after pruning")]
    EmptyAfterPrune,
    #[error("expected {expected} plausible-value columns, got {got}")]
    PlausibleGroupSize { expected: usize, got: usize },
    #[error("row {row}: plausible value in `{column}` is missing")]
    MissingPlausibleValue { row: usize, column: String },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("dataset has no binary target")]
    MissingTarget,
    #[error("dataset has no level labels")]
    MissingLabels,
    #[error("class {class} has {count} rows, need at least {required}")]
    ClassTooSmall {
        class: u8,
        count: usize,
        required: usize,
    },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("{0}")]
    Shape(String),
    #[error("{0} looks like an already preprocessed dataset")]
    AlreadyPreprocessed(String),
    #[error("schema: {0}")]
    Schema(String),
}

/// How a column is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableKind {
    /// Count or ordinal response mapped to `[0, 1]` by min-max scaling.
    NormalizedScalar,
    /// Indicator column, or a categorical code column awaiting one-hot encoding
    /// when a category set is declared.
    Binary,
    /// Target-like categorical column; carried through and never encoded.
    CategoricalLabel,
    /// One of the ten plausible-value score draws.
    PlausibleValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    /// Closed interval of accepted raw values (scalars only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    /// Category tokens. Cells of a categorical column store the index of
    /// their token in this list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Source column of a one-hot indicator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoded_from: Option<String>,
}

impl VariableSpec {
    pub fn scalar(name: impl Into<String>) -> Self {
        Self::new(name, VariableKind::NormalizedScalar)
    }

    pub fn scalar_in(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            range: Some([lo, hi]),
            ..Self::scalar(name)
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self::new(name, VariableKind::Binary)
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            categories: categories.into_iter().map(Into::into).collect(),
            ..Self::new(name, VariableKind::Binary)
        }
    }

    pub fn plausible_value(name: impl Into<String>) -> Self {
        Self::new(name, VariableKind::PlausibleValue)
    }

    pub fn new(name: impl Into<String>, kind: VariableKind) -> Self {
        Self {
            name: name.into(),
            kind,
            range: None,
            categories: Vec::new(),
            encoded_from: None,
        }
    }

    /// True for a code column that still has to be one-hot encoded.
    pub fn is_encodable(&self) -> bool {
        !self.categories.is_empty()
    }
}

/// Row-major numeric matrix with one [`VariableSpec`] per column.
///
/// Missing cells are stored as NaN. Row ids are the row positions in the
/// original source file and survive every filtering step.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Vec<VariableSpec>,
    values: Vec<f64>,
    row_ids: Vec<usize>,
    labels: Option<Vec<LevelLabel>>,
    target: Option<Vec<u8>>,
    provenance: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Row ids default to `0..n`.
    pub fn from_rows(schema: Vec<VariableSpec>, rows: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        let ids = (0..rows.len()).collect();
        Self::from_rows_with_ids(schema, rows, ids)
    }

    pub fn from_rows_with_ids(
        schema: Vec<VariableSpec>,
        rows: Vec<Vec<f64>>,
        row_ids: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        let width = schema.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DatasetError::Shape(format!(
                    "row {i} has {} cells, schema has {width} columns",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_parts(schema, values, row_ids)
    }

    pub(crate) fn from_parts(
        schema: Vec<VariableSpec>,
        values: Vec<f64>,
        row_ids: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        check_schema(&schema)?;
        if values.len() != schema.len() * row_ids.len() {
            return Err(DatasetError::Shape(format!(
                "{} cells do not fill {} rows of width {}",
                values.len(),
                row_ids.len(),
                schema.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(row_ids.len());
        if let Some(dup) = row_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(DatasetError::Shape(format!("duplicate row id {dup}")));
        }
        Ok(Self {
            schema,
            values,
            row_ids,
            labels: None,
            target: None,
            provenance: Vec::new(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<LevelLabel>) -> Result<Self, DatasetError> {
        if labels.len() != self.n_rows() {
            return Err(DatasetError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n_rows()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches a binary target (`1` = positive class).
    pub fn with_target(mut self, target: Vec<u8>) -> Result<Self, DatasetError> {
        if target.len() != self.n_rows() {
            return Err(DatasetError::Shape(format!(
                "{} targets for {} rows",
                target.len(),
                self.n_rows()
            )));
        }
        if let Some(bad) = target.iter().find(|&&t| t > 1) {
            return Err(DatasetError::Shape(format!("target value {bad} is not 0 or 1")));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn with_provenance(mut self, step: impl Into<String>) -> Self {
        self.provenance.push(step.into());
        self
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.iter().map(|s| s.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.rows().map(|r| r[col]).collect()
    }

    /// Row-major cell storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn labels(&self) -> Option<&[LevelLabel]> {
        self.labels.as_deref()
    }

    pub fn target(&self) -> Option<&[u8]> {
        self.target.as_deref()
    }

    pub fn require_target(&self) -> Result<&[u8], DatasetError> {
        self.target().ok_or(DatasetError::MissingTarget)
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.value(row, col).is_nan()
    }

    /// Positions of the rows in each target class (`[negatives, positives]`).
    pub fn class_positions(&self) -> Result<[Vec<usize>; 2], DatasetError> {
        let target = self.require_target()?;
        let mut classes = [Vec::new(), Vec::new()];
        for (i, &t) in target.iter().enumerate() {
            classes[t as usize].push(i);
        }
        Ok(classes)
    }

    /// New dataset holding the rows at `positions`, in the given order.
    pub fn select_rows(&self, positions: &[usize]) -> Dataset {
        let w = self.n_cols();
        let mut values = Vec::with_capacity(positions.len() * w);
        for &p in positions {
            values.extend_from_slice(self.row(p));
        }
        Dataset {
            schema: self.schema.clone(),
            values,
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
            target: self
                .target
                .as_ref()
                .map(|t| positions.iter().map(|&p| t[p]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// Rows whose id is in `ids`, kept in this dataset's order.
    pub fn select_ids(&self, ids: &std::collections::HashSet<usize>) -> Dataset {
        let positions: Vec<usize> = (0..self.n_rows())
            .filter(|&p| ids.contains(&self.row_ids[p]))
            .collect();
        self.select_rows(&positions)
    }

    pub fn drop_columns(&self, names: &[String]) -> Result<Dataset, DatasetError> {
        for n in names {
            if self.column_index(n).is_none() {
                return Err(DatasetError::UnknownColumn(n.clone()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| !names.contains(&self.schema[c].name))
            .collect();
        Ok(self.project(&keep))
    }

    pub(crate) fn project(&self, keep: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(self.n_rows() * keep.len());
        for r in self.rows() {
            values.extend(keep.iter().map(|&c| r[c]));
        }
        Dataset {
            schema: keep.iter().map(|&c| self.schema[c].clone()).collect(),
            values,
            ..self.clone_meta()
        }
    }

    /// Same rows, replaced columns.
    pub(crate) fn with_columns(&self, schema: Vec<VariableSpec>, values: Vec<f64>) -> Dataset {
        debug_assert_eq!(values.len(), schema.len() * self.n_rows());
        Dataset {
            schema,
            values,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            schema: Vec::new(),
            values: Vec::new(),
            row_ids: self.row_ids.clone(),
            labels: self.labels.clone(),
            target: self.target.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Keeps rows whose label category is `positive` or `negative` and sets the
    /// binary target (`1` for `positive`).
    pub fn binarize(&self, positive: Category, negative: Category) -> Result<Dataset, DatasetError> {
        let labels = self.labels().ok_or(DatasetError::MissingLabels)?;
        let positions: Vec<usize> = (0..self.n_rows())
            .filter(|&i| labels[i].category == positive || labels[i].category == negative)
            .collect();
        let target = positions
            .iter()
            .map(|&i| u8::from(labels[i].category == positive))
            .collect();
        let subset = self.select_rows(&positions).with_target(target)?;
        Ok(subset.with_provenance(format!(
            "binarize {positive:?}(1) vs {negative:?}(0): {} -> {} rows",
            self.n_rows(),
            positions.len()
        )))
    }
}

fn check_schema(schema: &[VariableSpec]) -> Result<(), DatasetError> {
    let mut names = std::collections::HashSet::new();
    for spec in schema {
        if !names.insert(spec.name.as_str()) {
            return Err(DatasetError::Schema(format!("column `{}` declared twice", spec.name)));
        }
        if let Some([lo, hi]) = spec.range {
            if !(lo <= hi) {
                return Err(DatasetError::Schema(format!(
                    "column `{}` has an empty range [{lo}, {hi}]",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}
