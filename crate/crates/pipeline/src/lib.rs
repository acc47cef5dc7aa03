//! Experiment orchestration for `skillshap`: configuration, preprocessing of
//! raw survey files, the three pairwise level experiments, output bundles
//! with manifests, and SVG rendering of attribution plots.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod preprocess;
pub mod report;
pub mod svg;

use std::path::Path;

use skillshap_core::attribution::AttributionError;
use skillshap_core::dataset::DatasetError;
use skillshap_core::models::ModelError;
use skillshap_core::validation::ValidationError;
use thiserror::Error;

pub use bundle::{Bundle, FileEntry, Manifest};
pub use config::{AttributionPlan, Config, ExperimentName, ExperimentPlan, Instances};
pub use experiment::{run_experiment, RunOptions};
pub use preprocess::preprocess;
pub use svg::{render_svg, render_svg_json};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Data {
        stage: String,
        #[source]
        source: DatasetError,
    },
    #[error("{stage}: {source}")]
    Model {
        stage: String,
        #[source]
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Validation {
        stage: String,
        #[source]
        source: ValidationError,
    },
    #[error("{stage}: {source}")]
    Attribution {
        stage: String,
        #[source]
        source: AttributionError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("plot: {0}")]
    Plot(String),
    #[error("output bundle: {0}")]
    Bundle(String),
}

impl PipelineError {
    pub fn data(stage: impl Into<String>) -> impl FnOnce(DatasetError) -> PipelineError {
        let stage = stage.into();
        move |source| PipelineError::Data { stage, source }
    }

    pub fn model(stage: impl Into<String>) -> impl FnOnce(ModelError) -> PipelineError {
        let stage = stage.into();
        move |source| PipelineError::Model { stage, source }
    }

    pub fn validation(stage: impl Into<String>) -> impl FnOnce(ValidationError) -> PipelineError {
        let stage = stage.into();
        move |source| PipelineError::Validation { stage, source }
    }

    pub fn attribution(stage: impl Into<String>) -> impl FnOnce(AttributionError) -> PipelineError {
        let stage = stage.into();
        move |source| PipelineError::Attribution { stage, source }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 4 convergence, 3 everything else.
    pub fn exit_code(&self) -> i32 {
        let convergence = |e: &ModelError| matches!(e, ModelError::NotConverged { .. } | ModelError::Diverged { .. });
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Model { source, .. } if convergence(source) => 4,
            PipelineError::Model {
                source: ModelError::UnknownHyperparameter { .. } | ModelError::BadHyperparameter { .. },
                ..
            } => 2,
            PipelineError::Validation {
                source: ValidationError::Fold { source, .. },
                ..
            } if convergence(source) => 4,
            PipelineError::Validation {
                source:
                    ValidationError::Fold {
                        source: ModelError::UnknownHyperparameter { .. } | ModelError::BadHyperparameter { .. },
                        ..
                    }
                    | ValidationError::EmptyGrid,
                ..
            } => 2,
            _ => 3,
        }
    }
}

/// `sha256` of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use skillshap_core::Family;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        let nc = ModelError::NotConverged {
            family: Family::Svm,
            iterations: 3,
            gradient_norm: 1.0,
        };
        assert_eq!(PipelineError::model("fit")(nc).exit_code(), 4);
        let fold = ValidationError::Fold {
            fold: 1,
            source: ModelError::Diverged { epoch: 2 },
        };
        assert_eq!(PipelineError::validation("search")(fold).exit_code(), 4);
        assert_eq!(PipelineError::data("load")(DatasetError::EmptyAfterPrune).exit_code(), 3);
        assert_eq!(PipelineError::validation("search")(ValidationError::EmptyGrid).exit_code(), 2);
    }

    #[test]
    fn digest_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
