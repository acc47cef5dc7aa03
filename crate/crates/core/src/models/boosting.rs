//! Stagewise boosting on the log-odds with logistic loss.
//!
//! Three variants share the outer loop and differ in how each stage's tree
//! is grown:
//!
//! * first-order: least-squares regression tree on the negative gradients,
//!   leaves hold the mean residual;
//! * second-order: exact greedy splits with the regularized gain
//!   `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`, leaves hold `−G/(H+λ)`;
//! * leaf-wise: second-order statistics over quantile-binned features, grown
//!   best-leaf-first up to a leaf budget.

use serde::{Deserialize, Serialize};

use super::tree::{grow, midpoint, Acc, Criterion, GrowParams, Matrix, Node, SortedColumns, Tree, TreeEnsemble};
use super::{sigmoid, FittedModel, Link, ModelConfig, ModelError, Parameters, ScoreKind, TrainingData};
use crate::dataset::Dataset;

const DEFAULT_DEPTH: usize = 3;

struct StageSettings {
    n_estimators: usize,
    learning_rate: f64,
}

fn stage_settings(config: &ModelConfig) -> Result<StageSettings, ModelError> {
    let learning_rate = config.f64_or("learning_rate", 0.1)?;
    if learning_rate < 0.0 {
        return Err(ModelError::BadHyperparameter {
            name: "learning_rate".into(),
            reason: "must be non-negative".into(),
        });
    }
    Ok(StageSettings {
        n_estimators: config.usize_or("n_estimators", 100)?,
        learning_rate,
    })
}

/// Log-odds of the positive rate; a single-class set is clamped to a finite value.
fn base_log_odds(data: &TrainingData) -> f64 {
    let p = data.positive_rate().clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Runs the stage loop. `fit_tree` receives per-sample gradients and
/// hessians of the logistic loss and returns an unscaled tree.
fn boost(
    data: &TrainingData,
    settings: &StageSettings,
    mut fit_tree: impl FnMut(&[f64], &[f64]) -> Tree,
) -> TreeEnsemble {
    let base = base_log_odds(data);
    let n = data.x.n;
    let mut raw = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(settings.n_estimators);
    for _ in 0..settings.n_estimators {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - data.y[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let mut tree = fit_tree(&grad, &hess);
        tree.scale_leaves(settings.learning_rate);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += tree.predict(data.x.row(i));
        }
        trees.push(tree);
    }
    TreeEnsemble {
        base,
        tree_weight: 1.0,
        trees,
        link: Link::Logistic,
    }
}

fn finish(config: &ModelConfig, width: usize, ensemble: TreeEnsemble) -> FittedModel {
    FittedModel {
        config: config.clone(),
        feature_width: width,
        score_kind: ScoreKind::Probability,
        link: Link::Logistic,
        parameters: Parameters::Trees(ensemble),
    }
}

/// First-order gradient boosting with depth-limited least-squares trees.
pub fn fit_gradient_boosting(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let settings = stage_settings(config)?;
    let params = GrowParams {
        criterion: Criterion::Gradient { lambda: 0.0 },
        max_depth: Some(config.usize_or("max_depth", DEFAULT_DEPTH)?),
        min_samples_leaf: config
            .usize_or("min_samples_leaf", super::cart::DEFAULT_MIN_SAMPLES_LEAF)?
            .max(1) as f64,
        min_child_weight: 0.0,
        max_features: None,
    };
    let sorted = SortedColumns::new(&data.x);
    let ensemble = boost(&data, &settings, |g, _| {
        let stats: Vec<Acc> = g.iter().map(|&g| Acc { a: g, b: 1.0, n: 1.0 }).collect();
        grow(&data.x, &sorted, &stats, &params, None)
    });
    Ok(finish(config, data.x.m, ensemble))
}

/// Second-order boosting with exact greedy splits.
pub fn fit_second_order_boosting(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let settings = stage_settings(config)?;
    let lambda = non_negative(config, "lambda", 1.0)?;
    let params = GrowParams {
        criterion: Criterion::Gradient { lambda },
        max_depth: Some(config.usize_or("max_depth", DEFAULT_DEPTH)?),
        min_samples_leaf: 1.0,
        min_child_weight: non_negative(config, "min_child_weight", 1.0)?,
        max_features: None,
    };
    let sorted = SortedColumns::new(&data.x);
    let ensemble = boost(&data, &settings, |g, h| {
        let stats: Vec<Acc> = g
            .iter()
            .zip(h)
            .map(|(&g, &h)| Acc { a: g, b: h, n: 1.0 })
            .collect();
        grow(&data.x, &sorted, &stats, &params, None)
    });
    Ok(finish(config, data.x.m, ensemble))
}

fn non_negative(config: &ModelConfig, name: &str, default: f64) -> Result<f64, ModelError> {
    let v = config.f64_or(name, default)?;
    if v < 0.0 {
        return Err(ModelError::BadHyperparameter {
            name: name.into(),
            reason: "must be non-negative".into(),
        });
    }
    Ok(v)
}

/// Per-feature bin upper edges. A value `x` falls in the first bin `b` with
/// `x <= edges[b]`, or in the last bin when it exceeds every edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub edges: Vec<Vec<f64>>,
}

impl BinMapper {
    /// Quantile bins with at most `max_bins` bins per feature. Features with
    /// few distinct values get one bin per value.
    pub fn fit(x: &[f64], n: usize, m: usize, max_bins: usize) -> BinMapper {
        let max_bins = max_bins.max(1);
        let edges = (0..m)
            .map(|f| {
                let mut vals: Vec<f64> = (0..n).map(|i| x[i * m + f]).collect();
                vals.sort_by(f64::total_cmp);
                let mut distinct: Vec<(f64, usize)> = Vec::new();
                for v in vals {
                    match distinct.last_mut() {
                        Some((last, c)) if *last == v => *c += 1,
                        _ => distinct.push((v, 1)),
                    }
                }
                if distinct.len() <= max_bins {
                    return distinct.windows(2).map(|w| midpoint(w[0].0, w[1].0)).collect();
                }
                let per_bin = n as f64 / max_bins as f64;
                let mut edges = Vec::new();
                let mut acc = 0usize;
                for k in 0..distinct.len() - 1 {
                    acc += distinct[k].1;
                    if edges.len() + 1 < max_bins && acc as f64 >= per_bin * (edges.len() + 1) as f64 {
                        edges.push(midpoint(distinct[k].0, distinct[k + 1].0));
                    }
                }
                edges
            })
            .collect();
        BinMapper { edges }
    }

    pub fn bin(&self, feature: usize, v: f64) -> usize {
        self.edges[feature].partition_point(|&e| e < v)
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: f64,
}

struct LeafState {
    node: usize,
    rows: Vec<u32>,
    g: f64,
    h: f64,
    best: Option<(usize, usize, f64)>,
}

struct LeafwiseParams {
    num_leaves: usize,
    lambda: f64,
    min_data_in_leaf: f64,
    min_child_weight: f64,
}

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        0.5 * g * g / d
    } else {
        0.0
    }
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

fn best_binned_split(
    leaf: &LeafState,
    bins: &[u16],
    mapper: &BinMapper,
    m: usize,
    grad: &[f64],
    hess: &[f64],
    p: &LeafwiseParams,
) -> Option<(usize, usize, f64)> {
    let n_leaf = leaf.rows.len() as f64;
    if n_leaf < 2.0 * p.min_data_in_leaf {
        return None;
    }
    let parent = leaf_score(leaf.g, leaf.h, p.lambda);
    let mut best: Option<(usize, usize, f64)> = None;
    for f in 0..m {
        let nb = mapper.n_bins(f);
        if nb < 2 {
            continue;
        }
        let mut hist = vec![Bin::default(); nb];
        for &i in &leaf.rows {
            let i = i as usize;
            let b = &mut hist[bins[i * m + f] as usize];
            b.g += grad[i];
            b.h += hess[i];
            b.n += 1.0;
        }
        let mut left = Bin::default();
        for (k, b) in hist.iter().enumerate().take(nb - 1) {
            left.g += b.g;
            left.h += b.h;
            left.n += b.n;
            let (rg, rh, rn) = (leaf.g - left.g, leaf.h - left.h, n_leaf - left.n);
            if left.n < p.min_data_in_leaf || rn < p.min_data_in_leaf {
                continue;
            }
            if left.h < p.min_child_weight || rh < p.min_child_weight {
                continue;
            }
            let (sl, sr) = (leaf_score(left.g, left.h, p.lambda), leaf_score(rg, rh, p.lambda));
            let gain = sl + sr - parent;
            let eps = 1e-12 * (1.0 + sl.abs() + sr.abs() + parent.abs());
            if gain > eps && best.map_or(true, |(_, _, bg)| gain > bg) {
                best = Some((f, k, gain));
            }
        }
    }
    best
}

fn grow_leafwise(
    x: &Matrix,
    bins: &[u16],
    mapper: &BinMapper,
    grad: &[f64],
    hess: &[f64],
    p: &LeafwiseParams,
) -> Tree {
    let m = x.m;
    let rows: Vec<u32> = (0..x.n as u32).collect();
    let (g, h) = (grad.iter().sum(), hess.iter().sum());
    let mut nodes = vec![Node::Leaf {
        value: leaf_weight(g, h, p.lambda),
        cover: x.n as f64,
    }];
    let mut root = LeafState {
        node: 0,
        rows,
        g,
        h,
        best: None,
    };
    root.best = best_binned_split(&root, bins, mapper, m, grad, hess, p);
    let mut leaves = vec![root];
    while leaves.len() < p.num_leaves.max(1) {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.best.map(|(_, _, gain)| (k, gain)))
            .fold(None, |acc: Option<(usize, f64)>, (k, gain)| match acc {
                Some((_, bg)) if bg >= gain => acc,
                _ => Some((k, gain)),
            });
        let Some((k, _)) = pick else { break };
        let leaf = leaves.swap_remove(k);
        let (f, bin_cut, _) = leaf.best.expect("picked leaves have a split");
        let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
        for &i in &leaf.rows {
            if (bins[i as usize * m + f] as usize) <= bin_cut {
                lrows.push(i);
            } else {
                rrows.push(i);
            }
        }
        let sum = |rs: &[u32]| -> (f64, f64) {
            rs.iter()
                .fold((0.0, 0.0), |(g, h), &i| (g + grad[i as usize], h + hess[i as usize]))
        };
        let (lg, lh) = sum(&lrows);
        let (rg, rh) = sum(&rrows);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf {
            value: leaf_weight(lg, lh, p.lambda),
            cover: lrows.len() as f64,
        });
        nodes.push(Node::Leaf {
            value: leaf_weight(rg, rh, p.lambda),
            cover: rrows.len() as f64,
        });
        nodes[leaf.node] = Node::Split {
            feature: f,
            threshold: mapper.edges[f][bin_cut],
            left: li,
            right: ri,
            cover: leaf.rows.len() as f64,
        };
        for (node, rows, g, h) in [(li, lrows, lg, lh), (ri, rrows, rg, rh)] {
            let mut child = LeafState {
                node,
                rows,
                g,
                h,
                best: None,
            };
            child.best = best_binned_split(&child, bins, mapper, m, grad, hess, p);
            leaves.push(child);
        }
        // Keep candidate order deterministic: lowest node id first on ties.
        leaves.sort_by_key(|l| l.node);
    }
    Tree { nodes }
}

/// Histogram-binned boosting grown leaf-wise.
pub fn fit_leafwise_boosting(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let settings = stage_settings(config)?;
    let max_bins = config.usize_or("max_bins", 255)?.clamp(1, u16::MAX as usize);
    let params = LeafwiseParams {
        num_leaves: config.usize_or("num_leaves", 31)?.max(1),
        lambda: non_negative(config, "lambda", 0.0)?,
        min_data_in_leaf: config.usize_or("min_data_in_leaf", 20)?.max(1) as f64,
        min_child_weight: non_negative(config, "min_child_weight", 1e-3)?,
    };
    let (n, m) = (data.x.n, data.x.m);
    let mapper = BinMapper::fit(data.x.data, n, m, max_bins);
    let mut bins = vec![0u16; n * m];
    for i in 0..n {
        for f in 0..m {
            bins[i * m + f] = mapper.bin(f, data.x.get(i, f)) as u16;
        }
    }
    let ensemble = boost(&data, &settings, |g, h| grow_leafwise(&data.x, &bins, &mapper, g, h, &params));
    Ok(finish(config, m, ensemble))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::planted_binary;
    use crate::dataset::VariableSpec;
    use crate::models::{Family, HyperValue};
    use crate::validation::roc_auc;

    fn logloss(model: &TreeEnsemble, ds: &Dataset) -> f64 {
        let y = ds.target().unwrap();
        let mut total = 0.0;
        for (i, row) in ds.rows().enumerate() {
            let mut z = model.base;
            for t in &model.trees {
                z += t.predict(row);
            }
            let p = 1.0 / (1.0 + (-z).exp());
            total -= if y[i] == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        total / ds.n_rows() as f64
    }

    fn positive_rate(ds: &Dataset) -> f64 {
        let t = ds.target().unwrap();
        t.iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64
    }

    #[test]
    fn zero_stages_scores_positive_rate() {
        let ds = planted_binary(90, 3, 0.4, 1);
        for fam in [Family::GradientBoosting, Family::SecondOrderBoosting, Family::LeafwiseBoosting] {
            let cfg = ModelConfig::new(fam, 0).with("n_estimators", HyperValue::Int(0));
            let m = super::super::fit(&ds, &cfg).unwrap();
            for s in m.score_batch(&ds).unwrap() {
                assert!((s - positive_rate(&ds)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_learning_rate_equals_empty_ensemble() {
        let ds = planted_binary(90, 3, 0.4, 2);
        let zero = ModelConfig::new(Family::GradientBoosting, 0)
            .with("n_estimators", HyperValue::Int(20))
            .with("learning_rate", HyperValue::Float(0.0));
        let empty = ModelConfig::new(Family::GradientBoosting, 0).with("n_estimators", HyperValue::Int(0));
        let a = fit_gradient_boosting(&ds, &zero).unwrap();
        let b = fit_gradient_boosting(&ds, &empty).unwrap();
        assert_eq!(a.score_batch(&ds).unwrap(), b.score_batch(&ds).unwrap());
    }

    #[test]
    fn stagewise_loss_non_increasing() {
        for seed in 0..4 {
            let ds = planted_binary(300, 5, 0.5, seed);
            for lr in [0.1, 0.05, 0.01] {
                let cfg = ModelConfig::new(Family::GradientBoosting, 0)
                    .with("n_estimators", HyperValue::Int(60))
                    .with("learning_rate", HyperValue::Float(lr));
                let m = fit_gradient_boosting(&ds, &cfg).unwrap();
                let e = m.tree_ensemble().unwrap();
                let mut prev = f64::INFINITY;
                for k in 0..=e.trees.len() {
                    let loss = logloss(&e.truncated(k), &ds);
                    assert!(loss <= prev + 1e-12, "seed {seed} lr {lr} stage {k}: {loss} > {prev}");
                    prev = loss;
                }
            }
        }
    }

    #[test]
    fn huge_lambda_collapses_to_base_rate() {
        let ds = planted_binary(120, 4, 0.2, 3);
        let cfg = ModelConfig::new(Family::SecondOrderBoosting, 0)
            .with("lambda", HyperValue::Float(1e9))
            .with("min_child_weight", HyperValue::Float(0.0));
        let m = fit_second_order_boosting(&ds, &cfg).unwrap();
        for s in m.score_batch(&ds).unwrap() {
            assert!((s - positive_rate(&ds)).abs() < 1e-6);
        }
    }

    #[test]
    fn stump_leaf_weights_match_hand_sums() {
        // One feature, split obvious at 0.5; first stage gradients are p0 - y.
        let xs = [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9];
        let ys = [0u8, 0, 1, 0, 1, 1, 1, 0];
        let ds = Dataset::from_rows(vec![VariableSpec::scalar("x")], xs.iter().map(|&v| vec![v]).collect())
            .unwrap()
            .with_target(ys.to_vec())
            .unwrap();
        let lambda = 1.0;
        let cfg = ModelConfig::new(Family::SecondOrderBoosting, 0)
            .with("n_estimators", HyperValue::Int(1))
            .with("learning_rate", HyperValue::Float(1.0))
            .with("max_depth", HyperValue::Int(1))
            .with("lambda", HyperValue::Float(lambda))
            .with("min_child_weight", HyperValue::Float(0.0));
        let m = fit_second_order_boosting(&ds, &cfg).unwrap();
        let tree = &m.tree_ensemble().unwrap().trees[0];
        let (feature, threshold, left, right) = match tree.nodes[0] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => (feature, threshold, left, right),
            Node::Leaf { .. } => panic!("expected a stump"),
        };
        assert_eq!(feature, 0);
        let p0 = 0.5; // 4 positives of 8
        let h = p0 * (1.0 - p0);
        let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= threshold {
                gl += p0 - y as f64;
                hl += h;
            } else {
                gr += p0 - y as f64;
                hr += h;
            }
        }
        let value = |k: usize| match tree.nodes[k] {
            Node::Leaf { value, .. } => value,
            _ => panic!("leaf expected"),
        };
        assert!((value(left) - (-gl / (hl + lambda))).abs() < 1e-12);
        assert!((value(right) - (-gr / (hr + lambda))).abs() < 1e-12);
    }

    #[test]
    fn first_and_second_order_agree_on_planted_signal() {
        let train = planted_binary(800, 5, 0.1, 10);
        let test = planted_binary(600, 5, 0.1, 11);
        let cfg = |f| ModelConfig::new(f, 0).with("n_estimators", HyperValue::Int(100));
        let a = fit_gradient_boosting(&train, &cfg(Family::GradientBoosting)).unwrap();
        let b = fit_second_order_boosting(&train, &cfg(Family::SecondOrderBoosting)).unwrap();
        let y = test.target().unwrap();
        let auc_a = roc_auc(&a.score_batch(&test).unwrap(), y).unwrap();
        let auc_b = roc_auc(&b.score_batch(&test).unwrap(), y).unwrap();
        assert!(auc_a > 0.85 && auc_b > 0.85, "{auc_a} {auc_b}");
        assert!((auc_a - auc_b).abs() <= 0.05, "{auc_a} vs {auc_b}");
    }

    #[test]
    fn single_bin_is_constant() {
        let ds = planted_binary(100, 3, 0.2, 4);
        let cfg = ModelConfig::new(Family::LeafwiseBoosting, 0).with("max_bins", HyperValue::Int(1));
        let m = fit_leafwise_boosting(&ds, &cfg).unwrap();
        let e = m.tree_ensemble().unwrap();
        assert!(e.trees.iter().all(|t| t.nodes.len() == 1));
        let s = m.score_batch(&ds).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
    }

    #[test]
    fn two_leaf_cap_matches_depth_one_stumps() {
        // Few distinct values so bin edges coincide with exact midpoints.
        let raw = planted_binary(200, 3, 0.3, 5);
        let rounded: Vec<Vec<f64>> = raw.rows().map(|r| r.iter().map(|v| (v * 20.0).round() / 20.0).collect()).collect();
        let ds = Dataset::from_rows(raw.schema().to_vec(), rounded)
            .unwrap()
            .with_target(raw.target().unwrap().to_vec())
            .unwrap();
        let lw = ModelConfig::new(Family::LeafwiseBoosting, 0)
            .with("n_estimators", HyperValue::Int(10))
            .with("num_leaves", HyperValue::Int(2))
            .with("min_data_in_leaf", HyperValue::Int(1))
            .with("lambda", HyperValue::Float(1.0))
            .with("min_child_weight", HyperValue::Float(0.0));
        let so = ModelConfig::new(Family::SecondOrderBoosting, 0)
            .with("n_estimators", HyperValue::Int(10))
            .with("max_depth", HyperValue::Int(1))
            .with("lambda", HyperValue::Float(1.0))
            .with("min_child_weight", HyperValue::Float(0.0));
        let a = fit_leafwise_boosting(&ds, &lw).unwrap();
        let b = fit_second_order_boosting(&ds, &so).unwrap();
        let (ea, eb) = (a.tree_ensemble().unwrap(), b.tree_ensemble().unwrap());
        for (ta, tb) in ea.trees.iter().zip(&eb.trees) {
            match (ta.nodes[0], tb.nodes[0]) {
                (
                    Node::Split { feature: fa, threshold: xa, .. },
                    Node::Split { feature: fb, threshold: xb, .. },
                ) => {
                    assert_eq!(fa, fb);
                    assert!((xa - xb).abs() < 1e-12);
                }
                other => panic!("expected two stumps, got {other:?}"),
            }
            assert_eq!(ta.nodes.len(), 3);
            assert_eq!(tb.nodes.len(), 3);
        }
        let (sa, sb) = (a.score_batch(&ds).unwrap(), b.score_batch(&ds).unwrap());
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn thresholds_are_bin_edges() {
        let ds = planted_binary(2_000, 4, 0.2, 6);
        let cfg = ModelConfig::new(Family::LeafwiseBoosting, 0)
            .with("n_estimators", HyperValue::Int(20))
            .with("max_bins", HyperValue::Int(16));
        let m = fit_leafwise_boosting(&ds, &cfg).unwrap();
        let mapper = BinMapper::fit(ds.values(), ds.n_rows(), ds.n_cols(), 16);
        for f in 0..ds.n_cols() {
            assert!(mapper.n_bins(f) <= 16);
        }
        for t in &m.tree_ensemble().unwrap().trees {
            for n in &t.nodes {
                if let Node::Split { feature, threshold, .. } = n {
                    assert!(mapper.edges[*feature].contains(threshold));
                }
            }
        }
    }

    #[test]
    fn bin_mapper_routing_matches_edges() {
        let mapper = BinMapper {
            edges: vec![vec![1.5, 2.5]],
        };
        assert_eq!(mapper.bin(0, 1.0), 0);
        assert_eq!(mapper.bin(0, 1.5), 0);
        assert_eq!(mapper.bin(0, 2.0), 1);
        assert_eq!(mapper.bin(0, 9.0), 2);
    }
}
