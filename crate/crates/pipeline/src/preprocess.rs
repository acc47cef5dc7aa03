//! Raw survey CSV to a labeled, encoded dataset file.
//!
//! Stages run in order: load, prune, average plausible values, bin levels,
//! one-hot encode, add the noise control column. Min-max scaling is fitted
//! later on each experiment's training split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use skillshap_core::dataset::{
    add_noise_control, average_plausible_values, bin_levels, load_csv, missing_histogram, one_hot_encode,
    prune_missing, write_dataset, LoadOptions,
};
use skillshap_core::{rng, Dataset};

use crate::config::DataConfig;
use crate::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCount {
    pub stage: String,
    pub rows: usize,
    pub columns: usize,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub dataset: Dataset,
    /// Rows per number of missing cells, before pruning.
    pub missing_histogram: BTreeMap<usize, usize>,
    pub stages: Vec<StageCount>,
}

/// Seed of the noise control column for a base seed.
pub fn noise_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, &[0x9015e])
}

pub fn preprocess(data: &DataConfig, input: &Path, seed: u64) -> Result<Preprocessed, PipelineError> {
    if data.columns.is_empty() {
        return Err(PipelineError::Config("data.columns declares no feature columns".into()));
    }
    if data.plausible_values.is_empty() {
        return Err(PipelineError::Config("data.plausible_values is empty; labels cannot be derived".into()));
    }
    let mut stages = Vec::new();
    let mut note = |stage: &str, ds: &Dataset| {
        info!("{stage}: {} rows x {} columns", ds.n_rows(), ds.n_cols());
        stages.push(StageCount {
            stage: stage.to_string(),
            rows: ds.n_rows(),
            columns: ds.n_cols(),
        });
    };
    let opts = LoadOptions {
        missing_sentinels: data.missing.clone(),
    };
    let loaded = load_csv(input, &data.load_schema(), &opts).map_err(PipelineError::data("load"))?;
    note("load", &loaded);
    let histogram = missing_histogram(&loaded);
    let pruned = prune_missing(&loaded).map_err(PipelineError::data("prune"))?;
    note("prune", &pruned);
    let scores = average_plausible_values(&pruned, &data.plausible_values).map_err(PipelineError::data("average"))?;
    let labels = scores
        .into_iter()
        .map(bin_levels)
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::data("bin"))?;
    let labeled = pruned
        .drop_columns(&data.plausible_values)
        .and_then(|d| d.with_labels(labels))
        .map_err(PipelineError::data("bin"))?
        .with_provenance("bin_levels: mean plausible value to proficiency level");
    note("bin", &labeled);
    let encodable: Vec<String> = labeled
        .schema()
        .iter()
        .filter(|s| s.is_encodable())
        .map(|s| s.name.clone())
        .collect();
    let encoded = one_hot_encode(&labeled, &encodable).map_err(PipelineError::data("encode"))?;
    note("encode", &encoded);
    let out = if data.noise {
        add_noise_control(&encoded, noise_seed(seed))
    } else {
        encoded
    };
    note("noise", &out);
    Ok(Preprocessed {
        dataset: out,
        missing_histogram: histogram,
        stages,
    })
}

/// Path of the missing-cell histogram written next to a dataset file.
pub fn histogram_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".missing.json");
    PathBuf::from(s)
}

/// Writes the dataset (CSV plus schema sidecar) and the histogram.
pub fn write_preprocessed(p: &Preprocessed, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    write_dataset(&p.dataset, path).map_err(PipelineError::data("write"))?;
    #[derive(Serialize)]
    struct Doc<'a> {
        missing_cells_per_row: Vec<[usize; 2]>,
        stages: &'a [StageCount],
    }
    let doc = Doc {
        missing_cells_per_row: p.missing_histogram.iter().map(|(&k, &v)| [k, v]).collect(),
        stages: &p.stages,
    };
    let hist = histogram_path(path);
    let text = serde_json::to_string_pretty(&doc).expect("histogram serializes") + "\n";
    std::fs::write(&hist, text).map_err(PipelineError::io(&hist))
}
