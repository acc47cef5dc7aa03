use super::{check_width, Attribution, AttributionError, BackgroundSet, Method};
use crate::models::{FittedModel, Node, Tree};

/// `a! b! / (a+b+1)!`
fn path_weight(a: usize, b: usize) -> f64 {
    let n = a + b;
    let k = a.min(b);
    let binom = (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    1.0 / ((n + 1) as f64 * binom)
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Open,
    /// Feature value taken from the query row.
    Query,
    /// Feature value taken from the reference row.
    Reference,
}

struct Walk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    r: &'a [f64],
    side: Vec<Side>,
    query: Vec<usize>,
    reference: Vec<usize>,
    phi: &'a mut [f64],
    scale: f64,
}

impl Walk<'_> {
    /// A leaf reached only when every `query` feature follows `x` and every
    /// `reference` feature follows `r` contributes to a game whose Shapley
    /// values are `(p−1)! q!/(p+q)!` per query feature and `−p! (q−1)!/(p+q)!`
    /// per reference feature, times the leaf value.
    fn go(&mut self, at: usize) {
        match self.tree.nodes[at] {
            Node::Leaf { value, .. } => {
                let v = value * self.scale;
                if v == 0.0 {
                    return;
                }
                let (p, q) = (self.query.len(), self.reference.len());
                if p > 0 {
                    let w = v * path_weight(p - 1, q);
                    for &i in &self.query {
                        self.phi[i] += w;
                    }
                }
                if q > 0 {
                    let w = v * path_weight(p, q - 1);
                    for &i in &self.reference {
                        self.phi[i] -= w;
                    }
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let via = |row: &[f64]| if row[feature] <= threshold { left } else { right };
                let (gx, gr) = (via(self.x), via(self.r));
                match self.side[feature] {
                    Side::Query => self.go(gx),
                    Side::Reference => self.go(gr),
                    Side::Open if gx == gr => self.go(gx),
                    Side::Open => {
                        self.side[feature] = Side::Query;
                        self.query.push(feature);
                        self.go(gx);
                        self.query.pop();
                        self.side[feature] = Side::Reference;
                        self.reference.push(feature);
                        self.go(gr);
                        self.reference.pop();
                        self.side[feature] = Side::Open;
                    }
                }
            }
        }
    }
}

/// Interventional Tree SHAP: exact Shapley values of the ensemble's raw
/// output against each background row, averaged over the background set.
pub fn tree_shap(model: &FittedModel, x: &[f64], bg: &BackgroundSet) -> Result<Attribution, AttributionError> {
    check_width(model, x, bg)?;
    let ensemble = model.tree_ensemble().ok_or(AttributionError::Unsupported {
        method: Method::Tree,
        family: model.family(),
    })?;
    let m = x.len();
    let mut phi = vec![0.0; m];
    let scale = ensemble.tree_weight / bg.len() as f64;
    let mut baseline = 0.0;
    for j in 0..bg.len() {
        let r = bg.row(j);
        baseline += ensemble.raw(r);
        for tree in &ensemble.trees {
            Walk {
                tree,
                x,
                r,
                side: vec![Side::Open; m],
                query: Vec::new(),
                reference: Vec::new(),
                phi: &mut phi,
                scale,
            }
            .go(0);
        }
    }
    baseline /= bg.len() as f64;
    Ok(Attribution::new(Method::Tree, phi, baseline, ensemble.raw(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::exact_shapley;
    use crate::dataset::synthetic::planted_binary;
    use crate::models::{fit, Family, HyperValue, Link, ModelConfig, Parameters, ScoreKind, TreeEnsemble};

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    fn wrap(trees: Vec<Tree>, width: usize) -> FittedModel {
        FittedModel {
            config: ModelConfig::new(Family::GradientBoosting, 0),
            feature_width: width,
            score_kind: ScoreKind::Probability,
            link: Link::Logistic,
            parameters: Parameters::Trees(TreeEnsemble {
                base: 0.2,
                tree_weight: 1.0,
                trees,
                link: Link::Logistic,
            }),
        }
    }

    #[test]
    fn path_weight_formula() {
        for a in 0..8 {
            for b in 0..8 {
                let direct = factorial(a) * factorial(b) / factorial(a + b + 1);
                assert!((path_weight(a, b) - direct).abs() <= 1e-14 * direct);
            }
        }
    }

    #[test]
    fn constant_tree_gives_zero() {
        let model = wrap(vec![Tree::leaf(1.5, 10.0)], 3);
        let bg = BackgroundSet::new(vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let a = tree_shap(&model, &[5.0, 5.0, 5.0], &bg).unwrap();
        assert_eq!(a.values, vec![0.0; 3]);
    }

    #[test]
    fn stump_touches_one_feature() {
        let stump = Tree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    cover: 2.0,
                },
                Node::Leaf { value: -1.0, cover: 1.0 },
                Node::Leaf { value: 2.0, cover: 1.0 },
            ],
        };
        let model = wrap(vec![stump], 3);
        let bg = BackgroundSet::new(vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let a = tree_shap(&model, &[0.0, 1.0, 0.0], &bg).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a.values[2], 0.0);
        assert!((a.values[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn repeated_feature_on_path() {
        // x0 tested twice along one path.
        let t = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    cover: 4.0,
                },
                Node::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 3,
                    right: 4,
                    cover: 2.0,
                },
                Node::Split {
                    feature: 0,
                    threshold: 0.8,
                    left: 5,
                    right: 6,
                    cover: 2.0,
                },
                Node::Leaf { value: 1.0, cover: 1.0 },
                Node::Leaf { value: 3.0, cover: 1.0 },
                Node::Leaf { value: -2.0, cover: 1.0 },
                Node::Leaf { value: 7.0, cover: 1.0 },
            ],
        };
        let model = wrap(vec![t], 2);
        let bg = BackgroundSet::new(vec![vec![0.1, 0.9], vec![0.7, 0.2], vec![0.95, 0.95]]).unwrap();
        for x in [[0.9, 0.1], [0.2, 0.7], [0.6, 0.6]] {
            let a = tree_shap(&model, &x, &bg).unwrap();
            let e = exact_shapley(&model, &x, &bg).unwrap();
            for (p, q) in a.values.iter().zip(&e.values) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fitted_ensembles_match_enumeration() {
        let ds = planted_binary(300, 6, 0.4, 8);
        let bg = BackgroundSet::sample(&ds, 12, 3).unwrap();
        for cfg in [
            ModelConfig::new(Family::GradientBoosting, 0).with("n_estimators", HyperValue::Int(15)),
            ModelConfig::new(Family::RandomForest, 1).with("n_estimators", HyperValue::Int(8)),
            ModelConfig::new(Family::DecisionTree, 0).with("max_depth", HyperValue::Int(5)),
            ModelConfig::new(Family::LeafwiseBoosting, 0)
                .with("n_estimators", HyperValue::Int(10))
                .with("num_leaves", HyperValue::Int(6)),
        ] {
            let model = fit(&ds, &cfg).unwrap();
            for i in 0..4 {
                let x = ds.row(i);
                let a = tree_shap(&model, x, &bg).unwrap();
                let e = exact_shapley(&model, x, &bg).unwrap();
                assert!(a.residual <= 1e-9);
                for (p, q) in a.values.iter().zip(&e.values) {
                    assert!((p - q).abs() <= 1e-9, "{:?}: {p} vs {q}", cfg.family);
                }
            }
        }
    }

    #[test]
    fn rejects_non_tree_models() {
        let ds = planted_binary(60, 2, 0.3, 1);
        let model = fit(&ds, &ModelConfig::new(Family::LogisticRegression, 0)).unwrap();
        let bg = BackgroundSet::sample(&ds, 5, 0).unwrap();
        assert!(matches!(tree_shap(&model, ds.row(0), &bg), Err(AttributionError::Unsupported { .. })));
    }
}
