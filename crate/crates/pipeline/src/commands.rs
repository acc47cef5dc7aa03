//! The CLI verbs as library functions.

use std::path::{Path, PathBuf};

use log::info;
use skillshap_core::attribution::{default_budget, BackgroundSet, Method};
use skillshap_core::dataset::read_dataset;
use skillshap_core::dataset::synthetic::PlantedSignal;
use skillshap_core::dataset::write_dataset;
use skillshap_core::{Dataset, FittedModel};

use crate::bundle::{Bundle, Manifest};
use crate::config::{Config, ExperimentName};
use crate::experiment::{attribute_rows, decision_files, prepare, run_experiment, RunOptions, Seeds};
use crate::preprocess::{preprocess, write_preprocessed};
use crate::report::build_report;
use crate::{sha256_hex, PipelineError};

/// Per-invocation overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub balanced_test: Option<bool>,
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<Config, PipelineError> {
    let mut config = Config::load(path)?;
    if let Some(seed) = o.seed {
        config.override_seed(seed);
    }
    if let Some(jobs) = o.jobs {
        config.jobs = jobs.max(1);
    }
    if let Some(b) = o.balanced_test {
        config.balanced_test = b;
    }
    Ok(config)
}

/// Runs preprocessing and returns the written dataset path.
pub fn preprocess_command(
    config: &Config,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<PathBuf, PipelineError> {
    let input = input
        .map(Path::to_path_buf)
        .or_else(|| config.data.raw.clone())
        .ok_or_else(|| PipelineError::Config("no raw input: set data.raw or pass --input".into()))?;
    let output = output.map_or_else(|| config.data.preprocessed.clone(), Path::to_path_buf);
    let p = preprocess(&config.data, &input, config.seed)?;
    write_preprocessed(&p, &output)?;
    info!("wrote {} ({} rows x {} columns)", output.display(), p.dataset.n_rows(), p.dataset.n_cols());
    Ok(output)
}

fn load_data(config: &Config) -> Result<(Dataset, String), PipelineError> {
    let path = &config.data.preprocessed;
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    let ds = read_dataset(path).map_err(PipelineError::data("load"))?;
    if ds.labels().is_none() {
        return Err(PipelineError::Data {
            stage: "load".into(),
            source: skillshap_core::dataset::DatasetError::MissingLabels,
        });
    }
    Ok((ds, sha256_hex(&bytes)))
}

fn selected(config: &Config, experiment: Option<ExperimentName>) -> Result<Vec<ExperimentName>, PipelineError> {
    match experiment {
        Some(name) => {
            config.plan(name)?;
            Ok(vec![name])
        }
        None => Ok(config.experiments.iter().map(|p| p.name).collect()),
    }
}

/// Runs the requested experiments in config order and writes one bundle
/// per experiment under the output directory.
pub fn run_command(config: &Config, experiment: Option<ExperimentName>) -> Result<Vec<PathBuf>, PipelineError> {
    let (data, digest) = load_data(config)?;
    let opts = RunOptions::from_config(config, digest);
    let mut written = Vec::new();
    for name in selected(config, experiment)? {
        let plan = config.plan(name)?;
        info!("experiment {name}: seed {}", plan.seed);
        let out = run_experiment(plan, &data, &opts)?;
        let dir = config.output.join(name.name());
        out.bundle.write_to(&dir)?;
        info!("{name}: attributed {} ({} files)", out.selection.attributed, out.manifest.files.len());
        written.push(dir);
    }
    Ok(written)
}

/// Decision plots for `rows` from a finished bundle's attributed model,
/// written to `<bundle>/explain/`; the manifest is refreshed.
pub fn explain_command(config: &Config, experiment: ExperimentName, rows: &[usize]) -> Result<Vec<PathBuf>, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::Config("explain needs at least one row id".into()));
    }
    let plan = config.plan(experiment)?;
    let dir = config.output.join(experiment.name());
    let manifest = Manifest::read(&dir)?;
    let family = manifest.attributed.family;
    let model_path = dir.join(family.name()).join("model.json");
    let text = std::fs::read_to_string(&model_path).map_err(PipelineError::io(&model_path))?;
    let model = FittedModel::from_json(&text).map_err(PipelineError::model("load model"))?;
    let (data, digest) = load_data(config)?;
    if digest != manifest.data_sha256 {
        return Err(PipelineError::Bundle(format!(
            "{} changed since the bundle in {} was written",
            config.data.preprocessed.display(),
            dir.display()
        )));
    }
    let opts = RunOptions::from_config(config, digest);
    let seeds = Seeds::new(plan);
    let prep = prepare(plan, &data, &opts, &seeds)?;
    if prep.normalizer != manifest.normalization {
        return Err(PipelineError::Bundle("training split differs from the bundle; check seed and config".into()));
    }
    let features = prep.train.column_names();
    let method = plan.attribution.method.unwrap_or_else(|| Method::for_model(&model));
    let budget = plan.attribution.kernel_budget.unwrap_or_else(|| default_budget(features.len()));
    let bg = BackgroundSet::sample(&prep.train, plan.attribution.background_size, seeds.background)
        .map_err(PipelineError::attribution("background"))?;
    let mut picked = Vec::with_capacity(rows.len());
    for &id in rows {
        let (scaled, _) = prep
            .find(id)
            .ok_or_else(|| PipelineError::Config(format!("row {id} is not part of the {experiment} experiment")))?;
        picked.push((id, scaled));
    }
    let attrs = attribute_rows(&model, method, &picked, &bg, budget, seeds.kernel, config.jobs)?;
    let mut bundle = Bundle::default();
    let mut paths = Vec::new();
    for a in &attrs {
        let id = a.instance_id.expect("instance ids set");
        let (_, raw) = prep.find(id).expect("checked above");
        let stem = format!("decision_row{id}");
        decision_files(&mut bundle, &stem, a, &features, raw)?;
        paths.push(dir.join("explain").join(format!("{stem}.svg")));
    }
    bundle.add_json("attributions.json", &attrs);
    bundle.write_to(&dir.join("explain"))?;
    manifest.refresh(&dir)?;
    Ok(paths)
}

/// Writes `report.csv` and `report.txt` under the output directory and
/// returns the text table.
pub fn report_command(config: &Config) -> Result<String, PipelineError> {
    let r = build_report(&config.output)?;
    for (name, body) in [("report.csv", &r.csv), ("report.txt", &r.text)] {
        let path = config.output.join(name);
        std::fs::write(&path, body).map_err(PipelineError::io(&path))?;
    }
    Ok(r.text)
}

/// Writes a labeled planted-signal dataset in the preprocessed format.
pub fn synth_command(rows: usize, seed: u64, output: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    let ds = PlantedSignal {
        rows,
        ..PlantedSignal::default()
    }
    .generate(seed);
    write_dataset(&ds, output).map_err(PipelineError::data("write"))
}
