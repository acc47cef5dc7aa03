use rand::Rng;

use super::tree::{grow, Acc, Criterion, GrowParams, SortedColumns, TreeEnsemble};
use super::{FittedModel, Link, ModelConfig, ModelError, Parameters, ScoreKind, TrainingData};
use crate::dataset::Dataset;
use crate::rng;

pub(crate) const DEFAULT_MIN_SAMPLES_LEAF: usize = 5;

fn criterion(config: &ModelConfig) -> Result<Criterion, ModelError> {
    match config.text_or("criterion", "gini")? {
        "gini" => Ok(Criterion::Gini),
        "entropy" => Ok(Criterion::Entropy),
        other => Err(ModelError::BadHyperparameter {
            name: "criterion".into(),
            reason: format!("unknown criterion `{other}`"),
        }),
    }
}

/// Greedy CART classification tree. Leaves hold the positive-class fraction.
pub fn fit_decision_tree(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let params = GrowParams {
        criterion: criterion(config)?,
        max_depth: config.opt_usize_or("max_depth", None)?,
        min_samples_leaf: config.usize_or("min_samples_leaf", DEFAULT_MIN_SAMPLES_LEAF)?.max(1) as f64,
        min_child_weight: 0.0,
        max_features: None,
    };
    let sorted = SortedColumns::new(&data.x);
    let stats: Vec<Acc> = data.y.iter().map(|&y| Acc { a: y, b: 0.0, n: 1.0 }).collect();
    let tree = grow(&data.x, &sorted, &stats, &params, None);
    Ok(FittedModel {
        config: config.clone(),
        feature_width: data.x.m,
        score_kind: ScoreKind::Probability,
        link: Link::Identity,
        parameters: Parameters::Trees(TreeEnsemble {
            base: 0.0,
            tree_weight: 1.0,
            trees: vec![tree],
            link: Link::Identity,
        }),
    })
}

/// Bagged CART trees with per-node feature subsampling; the score is the
/// mean of the tree leaf fractions.
pub fn fit_random_forest(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let n_trees = config.usize_or("n_estimators", 100)?;
    if n_trees == 0 {
        return Err(ModelError::BadHyperparameter {
            name: "n_estimators".into(),
            reason: "a forest needs at least one tree".into(),
        });
    }
    let m = data.x.m;
    let max_features = match config.text_or("max_features", "sqrt")? {
        "sqrt" => ((m as f64).sqrt().ceil() as usize).clamp(1, m.max(1)),
        "all" => m,
        other => {
            return Err(ModelError::BadHyperparameter {
                name: "max_features".into(),
                reason: format!("expected `sqrt` or `all`, got `{other}`"),
            })
        }
    };
    let bootstrap = config.bool_or("bootstrap", true)?;
    let params = GrowParams {
        criterion: criterion(config)?,
        max_depth: config.opt_usize_or("max_depth", None)?,
        min_samples_leaf: config.usize_or("min_samples_leaf", DEFAULT_MIN_SAMPLES_LEAF)?.max(1) as f64,
        min_child_weight: 0.0,
        max_features: Some(max_features),
    };
    let sorted = SortedColumns::new(&data.x);
    let n = data.x.n;
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut gen = rng::seeded(rng::derive_seed(config.seed, &[0xf0e5, t as u64]));
        let mut counts = vec![1.0; n];
        if bootstrap {
            counts.iter_mut().for_each(|c| *c = 0.0);
            for _ in 0..n {
                counts[gen.random_range(0..n)] += 1.0;
            }
        }
        let stats: Vec<Acc> = counts
            .iter()
            .zip(&data.y)
            .map(|(&c, &y)| Acc { a: c * y, b: 0.0, n: c })
            .collect();
        trees.push(grow(&data.x, &sorted, &stats, &params, Some(&mut gen)));
    }
    Ok(FittedModel {
        config: config.clone(),
        feature_width: m,
        score_kind: ScoreKind::Probability,
        link: Link::Identity,
        parameters: Parameters::Trees(TreeEnsemble {
            base: 0.0,
            tree_weight: 1.0 / n_trees as f64,
            trees,
            link: Link::Identity,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::planted_binary;
    use crate::dataset::VariableSpec;
    use crate::models::impurity::{entropy_unchecked, gini_unchecked};
    use crate::models::{Family, HyperValue, Node};

    fn xor() -> Dataset {
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for k in 0..40 {
            let a = (k % 2) as f64;
            let b = ((k / 2) % 2) as f64;
            rows.push(vec![a, b]);
            target.push(u8::from(a != b));
        }
        Dataset::from_rows(vec![VariableSpec::scalar("a"), VariableSpec::scalar("b")], rows)
            .unwrap()
            .with_target(target)
            .unwrap()
    }

    fn accuracy(m: &FittedModel, ds: &Dataset) -> f64 {
        let p = m.predict_batch(ds).unwrap();
        let t = ds.target().unwrap();
        p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
    }

    #[test]
    fn xor_fits_with_depth_two() {
        let ds = xor();
        let cfg = ModelConfig::new(Family::DecisionTree, 0).with("max_depth", HyperValue::Int(2));
        let m = fit_decision_tree(&ds, &cfg).unwrap();
        assert_eq!(accuracy(&m, &ds), 1.0);
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let ds = planted_binary(50, 3, 0.0, 2);
        let cfg = ModelConfig::new(Family::DecisionTree, 0).with("max_depth", HyperValue::Int(0));
        let m = fit_decision_tree(&ds, &cfg).unwrap();
        let trees = &m.tree_ensemble().unwrap().trees;
        assert_eq!(trees[0].nodes.len(), 1);
        let t = ds.target().unwrap();
        let rate = t.iter().map(|&v| v as f64).sum::<f64>() / 50.0;
        let majority = u8::from(rate >= 0.5);
        assert!(m.predict_batch(&ds).unwrap().iter().all(|&p| p == majority));
    }

    fn brute_force_root(ds: &Dataset, crit: Criterion) -> (usize, f64, f64) {
        // Every (feature, midpoint) candidate, impurity decrease from scratch.
        let y = ds.target().unwrap();
        let imp = |pos: f64, n: f64| {
            let p = pos / n;
            match crit {
                Criterion::Gini => gini_unchecked(&[p, 1.0 - p]),
                _ => entropy_unchecked(&[p, 1.0 - p]),
            }
        };
        let n = ds.n_rows() as f64;
        let total_pos = y.iter().map(|&v| v as f64).sum::<f64>();
        let parent = n * imp(total_pos, n);
        let mut best = (usize::MAX, f64::NAN, f64::NEG_INFINITY);
        for f in 0..ds.n_cols() {
            let mut vals = ds.column(f);
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (mut nl, mut pl, mut nr, mut pr) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..ds.n_rows() {
                    if ds.value(i, f) <= t {
                        nl += 1.0;
                        pl += y[i] as f64;
                    } else {
                        nr += 1.0;
                        pr += y[i] as f64;
                    }
                }
                let gain = parent - nl * imp(pl, nl) - nr * imp(pr, nr);
                if gain > best.2 {
                    best = (f, t, gain);
                }
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_enumeration() {
        for (seed, crit, name) in [(1u64, Criterion::Gini, "gini"), (2, Criterion::Entropy, "entropy"), (3, Criterion::Gini, "gini")] {
            let ds = planted_binary(20, 4, 0.3, seed);
            let cfg = ModelConfig::new(Family::DecisionTree, 0)
                .with("max_depth", HyperValue::Int(1))
                .with("min_samples_leaf", HyperValue::Int(1))
                .with("criterion", HyperValue::Text(name.into()));
            let m = fit_decision_tree(&ds, &cfg).unwrap();
            let (bf, bt, _) = brute_force_root(&ds, crit);
            match m.tree_ensemble().unwrap().trees[0].nodes[0] {
                Node::Split { feature, threshold, .. } => {
                    assert_eq!(feature, bf);
                    assert!((threshold - bt).abs() < 1e-12);
                }
                Node::Leaf { .. } => panic!("expected a split"),
            }
        }
    }

    #[test]
    fn min_leaf_size_respected() {
        let ds = planted_binary(200, 3, 0.2, 8);
        let m = fit_decision_tree(&ds, &ModelConfig::new(Family::DecisionTree, 0)).unwrap();
        for n in &m.tree_ensemble().unwrap().trees[0].nodes {
            if let Node::Leaf { cover, .. } = n {
                assert!(*cover >= 5.0);
            }
        }
    }

    #[test]
    fn single_unbootstrapped_tree_equals_decision_tree() {
        let ds = planted_binary(120, 5, 0.2, 4);
        let rf = ModelConfig::new(Family::RandomForest, 3)
            .with("n_estimators", HyperValue::Int(1))
            .with("bootstrap", HyperValue::Bool(false))
            .with("max_features", HyperValue::Text("all".into()));
        let forest = fit_random_forest(&ds, &rf).unwrap();
        let tree = fit_decision_tree(&ds, &ModelConfig::new(Family::DecisionTree, 0)).unwrap();
        assert_eq!(forest.score_batch(&ds).unwrap(), tree.score_batch(&ds).unwrap());
    }

    #[test]
    fn forest_is_deterministic_and_bounded() {
        let ds = planted_binary(150, 6, 0.3, 5);
        let cfg = ModelConfig::new(Family::RandomForest, 11).with("n_estimators", HyperValue::Int(15));
        let a = fit_random_forest(&ds, &cfg).unwrap();
        let b = fit_random_forest(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let probe = planted_binary(300, 6, 0.0, 99);
        for s in a.score_batch(&probe).unwrap() {
            assert!((0.0..=1.0).contains(&s));
        }
        let other = fit_random_forest(&ds, &ModelConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, other);
    }
}
