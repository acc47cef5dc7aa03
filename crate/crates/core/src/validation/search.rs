use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::folds::FoldAssignment;
use super::metrics::{ConfusionMatrix, Evaluation, Metrics};
use super::ValidationError;
use crate::dataset::{format_float, undersample, Dataset};
use crate::models::{fit, Family, FittedModel, Grid, ModelConfig};
use crate::rng;

/// One validation-fold score, kept for replaying metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub row_id: usize,
    pub score: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    #[serde(flatten)]
    pub evaluation: Evaluation,
    /// Threshold used to turn scores into classes.
    pub threshold: f64,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub config: ModelConfig,
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub balanced: bool,
    pub rows: usize,
    #[serde(flatten)]
    pub evaluation: Evaluation,
}

/// Grid search results for one family, plus the held-out evaluation of the
/// selected configuration once it is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub family: Family,
    pub candidates: Vec<CandidateResult>,
    pub selected: usize,
    pub selection_trace: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test: Vec<TestEvaluation>,
}

impl EvaluationReport {
    pub fn selected_config(&self) -> &ModelConfig {
        &self.candidates[self.selected].config
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per candidate (mean validation metrics), then one row per test
    /// evaluation.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row", "config"];
        header.extend(Metrics::NAMES);
        w.write_record(&header).expect("in-memory write");
        let mut emit = |row: String, config: String, m: &Metrics| {
            let mut rec = vec![row, config];
            rec.extend(m.values().iter().map(|&v| format_float(v)));
            w.write_record(&rec).expect("in-memory write");
        };
        for (i, c) in self.candidates.iter().enumerate() {
            let tag = if i == self.selected { format!("cv{i}*") } else { format!("cv{i}") };
            emit(tag, c.config.label(), &c.mean);
        }
        for t in &self.test {
            let tag = if t.balanced { "test-balanced" } else { "test-natural" };
            emit(tag.into(), self.selected_config().label(), &t.evaluation.metrics);
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

fn run_fold(
    train: &Dataset,
    config: &ModelConfig,
    folds: &FoldAssignment,
    stream: u64,
    f: usize,
) -> Result<FoldResult, ValidationError> {
    let tag = |source| ValidationError::Fold { fold: f, source };
    let (outside, inside) = folds.split(f);
    let fit_set = undersample(
        &train.select_rows(&outside),
        rng::derive_seed(folds.seed, &[0xcf01, stream, f as u64]),
    )
    .map_err(|e| tag(e.into()))?;
    let model = fit(&fit_set, config).map_err(tag)?;
    let held = train.select_rows(&inside);
    let scores = model.score_batch(&held).map_err(tag)?;
    let labels = held.require_target()?;
    let evaluation = Evaluation::from_scores(&scores, labels, model.threshold())?;
    let predictions = held
        .row_ids()
        .iter()
        .zip(&scores)
        .zip(labels)
        .map(|((&row_id, &score), &label)| Prediction { row_id, score, label })
        .collect();
    Ok(FoldResult {
        fold: f,
        train_rows: fit_set.n_rows(),
        validation_rows: held.n_rows(),
        evaluation,
        threshold: model.threshold(),
        predictions,
    })
}

fn check_folds(train: &Dataset, folds: &FoldAssignment) -> Result<(), ValidationError> {
    if folds.row_ids != train.row_ids() {
        return Err(ValidationError::FoldMismatch);
    }
    Ok(())
}

/// For every fold: undersample the remaining folds, fit from scratch, and
/// evaluate on the fold. `stream` keys the undersampling seeds together with
/// the fold index.
pub fn cross_validate(
    train: &Dataset,
    config: &ModelConfig,
    folds: &FoldAssignment,
    stream: u64,
) -> Result<CandidateResult, ValidationError> {
    check_folds(train, folds)?;
    let results = (0..folds.k)
        .map(|f| run_fold(train, config, folds, stream, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(candidate(config, results))
}

fn candidate(config: &ModelConfig, folds: Vec<FoldResult>) -> CandidateResult {
    let per: Vec<Metrics> = folds.iter().map(|r| r.evaluation.metrics).collect();
    CandidateResult {
        config: config.clone(),
        mean: Metrics::mean(&per),
        folds,
    }
}

/// Cross-validates every grid point of `family` and picks the highest mean
/// AUC, then the highest mean accuracy, then the earliest grid point. All
/// candidates share `model_seed`; candidate `i` uses undersampling stream `i`.
/// Work units run on up to `jobs` threads; results do not depend on `jobs`.
pub fn grid_search(
    train: &Dataset,
    family: Family,
    grid: &Grid,
    folds: &FoldAssignment,
    model_seed: u64,
    jobs: usize,
) -> Result<(ModelConfig, EvaluationReport), ValidationError> {
    check_folds(train, folds)?;
    let configs: Vec<ModelConfig> = grid
        .points()
        .into_iter()
        .map(|hyperparameters| ModelConfig {
            family,
            hyperparameters,
            seed: model_seed,
        })
        .collect();
    if configs.is_empty() {
        return Err(ValidationError::EmptyGrid);
    }
    for c in &configs {
        c.validate().map_err(|source| ValidationError::Fold { fold: 0, source })?;
    }
    let units: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..folds.k).map(move |f| (c, f)))
        .collect();
    let slots: Vec<Mutex<Option<Result<FoldResult, ValidationError>>>> = units.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let u = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(c, f)) = units.get(u) else { break };
        let r = run_fold(train, &configs[c], folds, c as u64, f);
        let failed = r.is_err();
        *slots[u].lock().expect("slot lock") = Some(r);
        if failed {
            next.store(units.len(), Ordering::Relaxed);
        }
    };
    let jobs = jobs.clamp(1, units.len());
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(&work);
            }
        });
    }
    let mut results: Vec<Vec<FoldResult>> = vec![Vec::new(); configs.len()];
    for (slot, &(c, _)) in slots.into_iter().zip(&units) {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(r)) => results[c].push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    let candidates: Vec<CandidateResult> = configs.iter().zip(results).map(|(c, r)| candidate(c, r)).collect();
    let (selected, selection_trace) = select(&candidates);
    let report = EvaluationReport {
        family,
        selected,
        selection_trace,
        candidates,
        test: Vec::new(),
    };
    Ok((report.selected_config().clone(), report))
}

fn select(candidates: &[CandidateResult]) -> (usize, Vec<String>) {
    let mut trace: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            format!(
                "candidate {i} [{}]: mean AUC {}, mean ACC {}",
                c.config.label(),
                format_float(c.mean.auc),
                format_float(c.mean.acc)
            )
        })
        .collect();
    let best_auc = candidates.iter().map(|c| c.mean.auc).fold(f64::NEG_INFINITY, f64::max);
    let by_auc: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].mean.auc == best_auc).collect();
    if by_auc.len() == 1 {
        trace.push(format!("selected candidate {} by mean AUC", by_auc[0]));
        return (by_auc[0], trace);
    }
    let best_acc = by_auc.iter().map(|&i| candidates[i].mean.acc).fold(f64::NEG_INFINITY, f64::max);
    let by_acc: Vec<usize> = by_auc.into_iter().filter(|&i| candidates[i].mean.acc == best_acc).collect();
    if by_acc.len() == 1 {
        trace.push(format!("selected candidate {} by mean ACC among AUC ties", by_acc[0]));
    } else {
        trace.push(format!("selected candidate {} by grid order among AUC and ACC ties", by_acc[0]));
    }
    (by_acc[0], trace)
}

/// Scores `test` (after undersampling when `balance` is set) and computes
/// the six metrics with the confusion matrix.
pub fn evaluate_on_test(
    model: &FittedModel,
    test: &Dataset,
    balance: bool,
    seed: u64,
) -> Result<TestEvaluation, ValidationError> {
    let owned;
    let set = if balance {
        owned = undersample(test, seed)?;
        &owned
    } else {
        test
    };
    if set.n_rows() == 0 {
        return Err(ValidationError::SingleClass);
    }
    let scores = model
        .score_batch(set)
        .map_err(|source| ValidationError::Fold { fold: 0, source })?;
    let evaluation = Evaluation::from_scores(&scores, set.require_target()?, model.threshold())?;
    Ok(TestEvaluation {
        balanced: balance,
        rows: set.n_rows(),
        evaluation,
    })
}

/// Confusion matrix for scores under a threshold; exposed for replaying
/// stored predictions.
pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, ValidationError> {
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    ConfusionMatrix::from_predictions(&predicted, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::planted_binary;
    use crate::dataset::VariableSpec;
    use crate::models::HyperValue;
    use crate::validation::{roc_auc, stratified_kfold};

    /// Column 0 copies the label; column 1 is noise.
    fn label_copy(n: usize) -> Dataset {
        let target: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let rows = target
            .iter()
            .enumerate()
            .map(|(i, &t)| vec![f64::from(t), ((i * 37) % 11) as f64])
            .collect();
        Dataset::from_rows(vec![VariableSpec::scalar("copy"), VariableSpec::scalar("noise")], rows)
            .unwrap()
            .with_target(target)
            .unwrap()
    }

    #[test]
    fn five_folds_five_rows() {
        let ds = planted_binary(200, 3, 0.3, 1);
        let folds = stratified_kfold(&ds, 5, 4).unwrap();
        let r = cross_validate(&ds, &ModelConfig::new(Family::DecisionTree, 0), &folds, 0).unwrap();
        assert_eq!(r.folds.len(), 5);
        let mean_auc = r.folds.iter().map(|f| f.evaluation.metrics.auc).sum::<f64>() / 5.0;
        assert!((r.mean.auc - mean_auc).abs() <= 1e-12);
    }

    #[test]
    fn constant_model_gives_identical_fold_metrics() {
        let ds = label_copy(90);
        let folds = stratified_kfold(&ds, 5, 1).unwrap();
        let cfg = ModelConfig::new(Family::DecisionTree, 0).with("max_depth", HyperValue::Int(0));
        let r = cross_validate(&ds, &cfg, &folds, 0).unwrap();
        let m0 = r.folds[0].evaluation.metrics;
        assert!(r.folds.iter().all(|f| f.evaluation.metrics == m0));
    }

    #[test]
    fn stored_predictions_replay() {
        let ds = planted_binary(150, 3, 0.4, 3);
        let folds = stratified_kfold(&ds, 5, 2).unwrap();
        let r = cross_validate(&ds, &ModelConfig::new(Family::LogisticRegression, 0), &folds, 7).unwrap();
        for f in &r.folds {
            let scores: Vec<f64> = f.predictions.iter().map(|p| p.score).collect();
            let labels: Vec<u8> = f.predictions.iter().map(|p| p.label).collect();
            let cm = confusion_at(&scores, &labels, f.threshold).unwrap();
            assert_eq!(cm, f.evaluation.confusion);
            let acc = (cm.tp + cm.tn) as f64 / cm.total() as f64;
            assert!((acc - f.evaluation.metrics.acc).abs() <= 1e-12);
            assert!((roc_auc(&scores, &labels).unwrap() - f.evaluation.metrics.auc).abs() <= 1e-12);
        }
        let again = cross_validate(&ds, &ModelConfig::new(Family::LogisticRegression, 0), &folds, 7).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn planted_winner_selected() {
        let ds = label_copy(90);
        let folds = stratified_kfold(&ds, 5, 0).unwrap();
        let grid = Grid {
            axes: vec![
                ("criterion".into(), vec![HyperValue::Text("gini".into())]),
                ("max_depth".into(), vec![HyperValue::Int(0), HyperValue::Int(1)]),
            ],
        };
        let (best, report) = grid_search(&ds, Family::DecisionTree, &grid, &folds, 0, 1).unwrap();
        assert_eq!(best.hyperparameters["max_depth"], HyperValue::Int(1));
        assert_eq!(report.candidates[1].mean.auc, 1.0);
        assert_eq!(report.selection_trace.len(), 3);
    }

    #[test]
    fn single_point_grid_and_parallel_equivalence() {
        let ds = planted_binary(120, 3, 0.3, 5);
        let folds = stratified_kfold(&ds, 5, 3).unwrap();
        let single = Grid::single([("C".to_string(), HyperValue::Float(1.0))].into_iter().collect());
        let (best, _) = grid_search(&ds, Family::LogisticRegression, &single, &folds, 0, 1).unwrap();
        assert_eq!(best.hyperparameters["C"], HyperValue::Float(1.0));
        let grid = Family::LogisticRegression.default_grid();
        let (_, seq) = grid_search(&ds, Family::LogisticRegression, &grid, &folds, 0, 1).unwrap();
        let (_, par) = grid_search(&ds, Family::LogisticRegression, &grid, &folds, 0, 4).unwrap();
        assert_eq!(seq.candidates.len(), 6);
        assert_eq!(seq, par);
        assert_eq!(seq.to_json(), par.to_json());
    }

    #[test]
    fn empty_grid_rejected() {
        let ds = planted_binary(60, 2, 0.3, 5);
        let folds = stratified_kfold(&ds, 5, 3).unwrap();
        let g = Grid { axes: vec![] };
        assert!(matches!(
            grid_search(&ds, Family::DecisionTree, &g, &folds, 0, 1),
            Err(ValidationError::EmptyGrid)
        ));
    }

    #[test]
    fn test_evaluation_modes() {
        let ds = label_copy(60);
        let cfg = ModelConfig::new(Family::DecisionTree, 0);
        let model = fit(&ds, &cfg).unwrap();
        let t = evaluate_on_test(&model, &ds, false, 0).unwrap();
        assert_eq!(t.evaluation.metrics.values(), [1.0; 6]);
        let b = evaluate_on_test(&model, &ds, true, 0).unwrap();
        assert_eq!(b.rows, 40);
        let balanced = undersample(&ds, 1).unwrap();
        let again = evaluate_on_test(&model, &balanced, true, 5).unwrap();
        assert_eq!(again.rows, balanced.n_rows());
    }

    #[test]
    fn csv_has_metric_columns() {
        let ds = planted_binary(100, 2, 0.3, 6);
        let folds = stratified_kfold(&ds, 5, 3).unwrap();
        let (_, report) = grid_search(&ds, Family::DecisionTree, &Family::DecisionTree.default_grid(), &folds, 0, 2).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("row,config,ACC,RC,PR,SP,F1S,AUC\n"));
        assert_eq!(csv.lines().count(), 1 + report.candidates.len());
    }
}
