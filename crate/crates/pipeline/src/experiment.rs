//! One pairwise experiment: filter, split, scale, search every family,
//! evaluate on the held-out split, attribute the chosen model, and collect
//! every output into a [`Bundle`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use skillshap_core::attribution::{
    decision_plot_data, default_budget, explain, rank_instances, summary_plot_data, Attribution, AttributionSummary,
    BackgroundSet, Method,
};
use skillshap_core::dataset::{format_float, split_train_test, undersample, ScalarNormalizer, NOISE_COLUMN};
use skillshap_core::models::{fit, Grid};
use skillshap_core::validation::{evaluate_on_test, grid_search, stratified_kfold, EvaluationReport, Metrics, TestEvaluation};
use skillshap_core::{rng, Dataset, Family, FittedModel, ModelConfig};

use crate::bundle::{Bundle, Manifest, RowCounts, TIMINGS};
use crate::config::{Config, ExperimentPlan, Instances};
use crate::svg::render_svg;
use crate::PipelineError;

/// Settings shared by every experiment of a run.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub test_fraction: f64,
    pub folds: usize,
    pub jobs: usize,
    pub balanced_test: bool,
    pub noise_in_training: bool,
    pub grids: Vec<(Family, Grid)>,
    pub config_sha256: String,
    pub data_sha256: String,
}

impl RunOptions {
    pub fn from_config(config: &Config, data_sha256: String) -> RunOptions {
        RunOptions {
            test_fraction: config.test_fraction,
            folds: config.folds,
            jobs: config.jobs,
            balanced_test: config.balanced_test,
            noise_in_training: config.data.noise_in_training,
            grids: config.grids.clone(),
            config_sha256: config.digest.clone(),
            data_sha256,
        }
    }

    /// Default grids for every family; digests left empty.
    pub fn with_defaults() -> RunOptions {
        RunOptions {
            test_fraction: 0.2,
            folds: 5,
            jobs: 1,
            balanced_test: true,
            noise_in_training: true,
            grids: Family::ALL.iter().map(|&f| (f, f.default_grid())).collect(),
            config_sha256: String::new(),
            data_sha256: String::new(),
        }
    }

    pub fn grid(&self, family: Family) -> Grid {
        self.grids
            .iter()
            .find(|(f, _)| *f == family)
            .map_or_else(|| family.default_grid(), |(_, g)| g.clone())
    }
}

/// Named seed streams of one experiment.
#[derive(Clone, Debug)]
pub struct Seeds {
    pub base: u64,
    pub split: u64,
    pub folds: u64,
    pub refit: u64,
    pub test_balance: u64,
    pub background: u64,
    pub kernel: u64,
    model: u64,
}

impl Seeds {
    pub fn new(plan: &ExperimentPlan) -> Seeds {
        let d = |part: u64| rng::derive_seed(plan.seed, &[plan.name.tag(), part]);
        Seeds {
            base: plan.seed,
            split: d(0x5b11),
            folds: d(0xf01d5),
            refit: d(0xf1a1),
            test_balance: d(0x7e57),
            background: d(0xb6),
            kernel: d(0x4e4),
            model: d(0x30de1),
        }
    }

    pub fn model(&self, family: Family) -> u64 {
        let idx = Family::ALL.iter().position(|&f| f == family).expect("known family") as u64;
        rng::derive_seed(self.model, &[idx])
    }

    fn table(&self, families: &[Family]) -> BTreeMap<String, u64> {
        let mut t = BTreeMap::from([
            ("base".to_string(), self.base),
            ("split".to_string(), self.split),
            ("folds".to_string(), self.folds),
            ("refit-undersample".to_string(), self.refit),
            ("test-undersample".to_string(), self.test_balance),
            ("background".to_string(), self.background),
            ("kernel".to_string(), self.kernel),
        ]);
        for &f in families {
            t.insert(format!("model.{f}"), self.model(f));
        }
        t
    }
}

/// The two class-filtered splits before and after scaling.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub pair_rows: usize,
    pub train_raw: Dataset,
    pub test_raw: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub normalizer: ScalarNormalizer,
}

impl Prepared {
    /// Scaled and unscaled row for a row id from either split.
    pub fn find(&self, row_id: usize) -> Option<(&[f64], &[f64])> {
        for (scaled, raw) in [(&self.test, &self.test_raw), (&self.train, &self.train_raw)] {
            if let Some(p) = scaled.row_ids().iter().position(|&r| r == row_id) {
                return Some((scaled.row(p), raw.row(p)));
            }
        }
        None
    }
}

/// Filters to the plan's two categories, splits, and fits the scaling on the
/// training split. The noise column is dropped when excluded from training.
pub fn prepare(plan: &ExperimentPlan, data: &Dataset, opts: &RunOptions, seeds: &Seeds) -> Result<Prepared, PipelineError> {
    let pair = data
        .binarize(plan.positive, plan.negative)
        .map_err(PipelineError::data("binarize"))?;
    let pair = if !opts.noise_in_training && pair.column_index(NOISE_COLUMN).is_some() {
        pair.drop_columns(&[NOISE_COLUMN.to_string()])
            .map_err(PipelineError::data("binarize"))?
    } else {
        pair
    };
    let (train_raw, test_raw) =
        split_train_test(&pair, 1.0 - opts.test_fraction, seeds.split).map_err(PipelineError::data("split"))?;
    let normalizer = ScalarNormalizer::fit(&train_raw);
    let train = normalizer.apply(&train_raw).map_err(PipelineError::data("normalize"))?;
    let test = normalizer.apply(&test_raw).map_err(PipelineError::data("normalize"))?;
    Ok(Prepared {
        pair_rows: pair.n_rows(),
        train_raw,
        test_raw,
        train,
        test,
        normalizer,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyChoice {
    pub family: Family,
    pub config: ModelConfig,
    pub cv_auc: f64,
    pub cv_acc: f64,
}

/// Which fitted model is attributed and why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub rule: String,
    pub candidates: Vec<FamilyChoice>,
    pub attributed: Family,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttributionSet {
    pub family: Family,
    pub config: ModelConfig,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_budget: Option<usize>,
    pub background_rows: Vec<usize>,
    pub features: Vec<String>,
    pub attributions: Vec<Attribution>,
}

pub struct ExperimentOutput {
    pub bundle: Bundle,
    pub reports: Vec<EvaluationReport>,
    pub selection: Selection,
    pub attributions: AttributionSet,
    pub summary: AttributionSummary,
    pub manifest: Manifest,
    pub timings: Vec<(String, Duration)>,
}

struct Clock {
    laps: Vec<(String, Duration)>,
}

impl Clock {
    fn time<T>(&mut self, stage: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let stage = stage.into();
        let took = start.elapsed();
        info!("{stage}: {:.3} s", took.as_secs_f64());
        self.laps.push((stage, took));
        out
    }
}

fn metrics_csv(rows: &[(Family, &ModelConfig, &TestEvaluation)]) -> String {
    let mut w = csv_writer();
    let mut header = vec!["family", "config", "test", "rows"];
    header.extend(Metrics::NAMES);
    header.extend(["TP", "TN", "FP", "FN"]);
    w.push(header.iter().map(|s| s.to_string()).collect());
    for (family, config, t) in rows {
        let m = &t.evaluation.metrics;
        let c = &t.evaluation.confusion;
        let mut rec = vec![
            family.name().to_string(),
            config.label(),
            if t.balanced { "balanced" } else { "natural" }.to_string(),
            t.rows.to_string(),
        ];
        rec.extend(m.values().iter().map(|&v| format_float(v)));
        rec.extend([c.tp, c.tn, c.fp, c.fn_].iter().map(usize::to_string));
        w.push(rec);
    }
    render_csv(&w)
}

type CsvRows = Vec<Vec<String>>;

fn csv_writer() -> CsvRows {
    Vec::new()
}

fn render_csv(rows: &CsvRows) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn choose(plan: &ExperimentPlan, reports: &[EvaluationReport]) -> Selection {
    let candidates: Vec<FamilyChoice> = reports
        .iter()
        .map(|r| {
            let c = &r.candidates[r.selected];
            FamilyChoice {
                family: r.family,
                config: c.config.clone(),
                cv_auc: c.mean.auc,
                cv_acc: c.mean.acc,
            }
        })
        .collect();
    let (rule, attributed) = match plan.attribution.family {
        Some(f) => ("fixed by configuration".to_string(), f),
        None => {
            let mut best = 0;
            for (i, c) in candidates.iter().enumerate().skip(1) {
                let b = &candidates[best];
                if c.cv_auc > b.cv_auc || (c.cv_auc == b.cv_auc && c.cv_acc > b.cv_acc) {
                    best = i;
                }
            }
            (
                "highest mean validation AUC, then mean validation ACC, then plan order".to_string(),
                candidates[best].family,
            )
        }
    };
    Selection {
        rule,
        candidates,
        attributed,
    }
}

/// Attributes `rows` (row id, scaled row) against `bg`. Runs on up to
/// `jobs` threads; output order follows `rows`.
pub fn attribute_rows(
    model: &FittedModel,
    method: Method,
    rows: &[(usize, &[f64])],
    bg: &BackgroundSet,
    budget: usize,
    kernel_seed: u64,
    jobs: usize,
) -> Result<Vec<Attribution>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        rows.par_iter()
            .map(|&(id, x)| {
                explain(model, method, x, bg, budget, rng::derive_seed(kernel_seed, &[id as u64]))
                    .map(|a| a.with_instance(id))
                    .map_err(PipelineError::attribution(format!("attribute row {id}")))
            })
            .collect()
    })
}

/// Decision-plot JSON and SVG for one attributed row.
pub fn decision_files(
    bundle: &mut Bundle,
    stem: &str,
    attr: &Attribution,
    features: &[String],
    raw: &[f64],
) -> Result<(), PipelineError> {
    let raw_text: Vec<String> = raw.iter().map(|&v| format_float(v)).collect();
    let plot = decision_plot_data(attr, features, &raw_text).map_err(PipelineError::attribution("decision plot"))?;
    bundle.add_json(format!("{stem}.json"), &plot);
    bundle.add_text(format!("{stem}.svg"), render_svg(&plot));
    Ok(())
}

/// Runs the whole experiment in memory. Any failure aborts with the stage
/// name; nothing is written.
pub fn run_experiment(plan: &ExperimentPlan, data: &Dataset, opts: &RunOptions) -> Result<ExperimentOutput, PipelineError> {
    let name = plan.name.name();
    let seeds = Seeds::new(plan);
    let mut clock = Clock { laps: Vec::new() };
    let mut bundle = Bundle::default();

    let prep = clock.time("prepare", || prepare(plan, data, opts, &seeds))?;
    let train = &prep.train;
    let test = &prep.test;
    info!(
        "{name}: {} rows ({} train, {} test, {} features)",
        prep.pair_rows,
        train.n_rows(),
        test.n_rows(),
        train.n_cols()
    );
    let folds = stratified_kfold(train, opts.folds, seeds.folds).map_err(PipelineError::data("folds"))?;
    let balanced_train = undersample(train, seeds.refit).map_err(PipelineError::data("refit undersample"))?;

    let mut reports = Vec::with_capacity(plan.families.len());
    let mut models = Vec::with_capacity(plan.families.len());
    for &family in &plan.families {
        let grid = opts.grid(family);
        let (config, mut report) = clock
            .time(format!("search {family}"), || {
                grid_search(train, family, &grid, &folds, seeds.model(family), opts.jobs)
            })
            .map_err(PipelineError::validation(format!("search {family}")))?;
        let model = clock
            .time(format!("fit {family}"), || fit(&balanced_train, &config))
            .map_err(PipelineError::model(format!("fit {family}")))?;
        let stage = format!("test {family}");
        let balanced = evaluate_on_test(&model, test, true, seeds.test_balance).map_err(PipelineError::validation(&stage))?;
        let natural = evaluate_on_test(&model, test, false, seeds.test_balance).map_err(PipelineError::validation(&stage))?;
        report.test = vec![balanced, natural];
        bundle.add_text(format!("{family}/report.json"), report.to_json() + "\n");
        bundle.add_text(format!("{family}/metrics.csv"), report.to_csv());
        bundle.add_text(format!("{family}/model.json"), model.to_json() + "\n");
        reports.push(report);
        models.push(model);
    }
    let headline: Vec<(Family, &ModelConfig, &TestEvaluation)> = reports
        .iter()
        .map(|r| {
            let t = r.test.iter().find(|t| t.balanced == opts.balanced_test).expect("both test modes present");
            (r.family, r.selected_config(), t)
        })
        .collect();
    bundle.add_text("metrics.csv", metrics_csv(&headline));

    let selection = choose(plan, &reports);
    bundle.add_json("selection.json", &selection);
    let pos = plan
        .families
        .iter()
        .position(|&f| f == selection.attributed)
        .expect("attributed family was searched");
    let model = &models[pos];
    let config = reports[pos].selected_config().clone();

    let features = train.column_names();
    let method = plan.attribution.method.unwrap_or_else(|| Method::for_model(model));
    let budget = plan.attribution.kernel_budget.unwrap_or_else(|| default_budget(features.len()));
    let bg = BackgroundSet::sample(train, plan.attribution.background_size, seeds.background)
        .map_err(PipelineError::attribution("background"))?;
    let rows: Vec<(usize, &[f64])> = (0..test.n_rows()).map(|i| (test.row_ids()[i], test.row(i))).collect();
    let attributions = clock.time("attribute", || {
        attribute_rows(model, method, &rows, &bg, budget, seeds.kernel, opts.jobs)
    })?;
    let summary = rank_instances(&attributions, &features).map_err(PipelineError::attribution("rank"))?;

    let labels = test.labels().ok_or_else(|| PipelineError::Data {
        stage: "rank".into(),
        source: skillshap_core::dataset::DatasetError::MissingLabels,
    })?;
    let position: BTreeMap<usize, usize> = test.row_ids().iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let mut ranking = csv_writer();
    ranking.push(["rank", "row_id", "total_shap", "category", "level", "score"].map(String::from).to_vec());
    for (k, t) in summary.totals.iter().enumerate() {
        let l = labels[position[&t.row_id]];
        ranking.push(vec![
            (k + 1).to_string(),
            t.row_id.to_string(),
            format_float(t.total),
            l.category.name().to_string(),
            l.level.to_string(),
            format_float(l.raw_score),
        ]);
    }
    bundle.add_text("attribution/ranking.csv", render_csv(&ranking));
    bundle.add_json("attribution/summary.json", &summary);
    let summary_plot = summary_plot_data(&summary, features.len().min(20));
    bundle.add_json("attribution/summary_plot.json", &summary_plot);
    bundle.add_text("attribution/summary_plot.svg", render_svg(&summary_plot));

    let by_id: BTreeMap<usize, &Attribution> = attributions
        .iter()
        .map(|a| (a.instance_id.expect("instance ids set"), a))
        .collect();
    match &plan.attribution.instances {
        Instances::Extremes => {
            let ends = [("top", summary.top()), ("bottom", summary.bottom())];
            for (stem, t) in ends {
                let t = t.expect("test split is not empty");
                let (_, raw) = prep.find(t.row_id).expect("ranked rows come from the test split");
                decision_files(&mut bundle, &format!("attribution/decision_{stem}"), by_id[&t.row_id], &features, raw)?;
            }
        }
        Instances::Rows(ids) => {
            let mut extra = Vec::new();
            for &id in ids {
                let (scaled, _) = prep.find(id).ok_or_else(|| {
                    PipelineError::Config(format!("attribution row {id} is not part of the {name} experiment"))
                })?;
                if !by_id.contains_key(&id) {
                    extra.push((id, scaled));
                }
            }
            let extra = attribute_rows(model, method, &extra, &bg, budget, seeds.kernel, opts.jobs)?;
            let extra_by_id: BTreeMap<usize, &Attribution> =
                extra.iter().map(|a| (a.instance_id.expect("instance ids set"), a)).collect();
            for &id in ids {
                let attr = by_id.get(&id).or_else(|| extra_by_id.get(&id)).expect("attributed above");
                let (_, raw) = prep.find(id).expect("checked above");
                decision_files(&mut bundle, &format!("attribution/decision_row{id}"), attr, &features, raw)?;
            }
        }
    }
    let set = AttributionSet {
        family: selection.attributed,
        config: config.clone(),
        method,
        kernel_budget: (method == Method::Kernel).then_some(budget),
        background_rows: bg.row_ids().to_vec(),
        features,
        attributions,
    };
    bundle.add_json("attribution/attributions.json", &set);
    bundle.add_json("normalization.json", &prep.normalizer);

    let mut timings = String::new();
    for (stage, d) in &clock.laps {
        timings.push_str(&format!("{stage}\t{:.3} ms\n", d.as_secs_f64() * 1e3));
    }
    bundle.add_volatile(TIMINGS, timings);

    let positives = |ds: &Dataset| ds.target().map_or(0, |t| t.iter().filter(|&&v| v == 1).count());
    let manifest = Manifest {
        software: format!("skillshap {}", env!("CARGO_PKG_VERSION")),
        experiment: name.to_string(),
        config_sha256: opts.config_sha256.clone(),
        data_sha256: opts.data_sha256.clone(),
        positive: plan.positive,
        negative: plan.negative,
        seeds: seeds.table(&plan.families),
        rows: RowCounts {
            pair: prep.pair_rows,
            train: train.n_rows(),
            test: test.n_rows(),
            positive_train: positives(train),
            positive_test: positives(test),
        },
        normalization: prep.normalizer.clone(),
        attributed: config,
        files: Vec::new(),
        volatile: Vec::new(),
    };
    let manifest = bundle.seal(manifest);
    Ok(ExperimentOutput {
        bundle,
        reports,
        selection,
        attributions: set,
        summary,
        manifest,
        timings: clock.laps,
    })
}
