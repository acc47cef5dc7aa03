//! Binary trees, tree ensembles and the level-wise exact greedy grower shared
//! by CART, random forests and both exact boosting variants.

use std::ops::{Add, AddAssign, Sub};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::impurity::{entropy_unchecked, gini_unchecked};
use super::Link;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        cover: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
}

/// Nodes stored in a flat vector; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Features tested by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value, .. } = n {
                *value *= factor;
            }
        }
    }
}

/// `raw(x) = base + tree_weight * Σ_t tree_t(x)`; the score is `link(raw)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base: f64,
    pub tree_weight: f64,
    pub trees: Vec<Tree>,
    pub link: Link,
}

impl TreeEnsemble {
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.base + self.tree_weight * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    /// The ensemble made of the first `k` trees.
    pub fn truncated(&self, k: usize) -> TreeEnsemble {
        TreeEnsemble {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Per-sample split statistics. For impurity criteria `a` is the positive
/// weight and `n` the total weight; for the gradient criterion `a` is the
/// gradient sum and `b` the hessian sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Acc {
    pub a: f64,
    pub b: f64,
    pub n: f64,
}

impl Add for Acc {
    type Output = Acc;
    fn add(self, o: Acc) -> Acc {
        Acc {
            a: self.a + o.a,
            b: self.b + o.b,
            n: self.n + o.n,
        }
    }
}

impl Sub for Acc {
    type Output = Acc;
    fn sub(self, o: Acc) -> Acc {
        Acc {
            a: self.a - o.a,
            b: self.b - o.b,
            n: self.n - o.n,
        }
    }
}

impl AddAssign for Acc {
    fn add_assign(&mut self, o: Acc) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Criterion {
    Gini,
    Entropy,
    /// Regularized second-order gain; with unit hessians and `lambda = 0`
    /// this is least squares on the negative gradients.
    Gradient { lambda: f64 },
}

impl Criterion {
    pub fn leaf_value(self, s: &Acc) -> f64 {
        match self {
            Criterion::Gini | Criterion::Entropy => {
                if s.n > 0.0 {
                    s.a / s.n
                } else {
                    0.0
                }
            }
            Criterion::Gradient { lambda } => {
                let d = s.b + lambda;
                if d > 0.0 {
                    -s.a / d
                } else {
                    0.0
                }
            }
        }
    }

    /// Node score; a split's gain is `score(L) + score(R) - score(P)`.
    pub fn score(self, s: &Acc) -> f64 {
        match self {
            Criterion::Gini | Criterion::Entropy => {
                if s.n <= 0.0 {
                    return 0.0;
                }
                let p = (s.a / s.n).clamp(0.0, 1.0);
                let imp = if self == Criterion::Gini {
                    gini_unchecked(&[p, 1.0 - p])
                } else {
                    entropy_unchecked(&[p, 1.0 - p])
                };
                -s.n * imp
            }
            Criterion::Gradient { lambda } => {
                let d = s.b + lambda;
                if d > 0.0 {
                    0.5 * s.a * s.a / d
                } else {
                    0.0
                }
            }
        }
    }

    fn is_pure(self, s: &Acc) -> bool {
        match self {
            Criterion::Gini | Criterion::Entropy => s.a <= 0.0 || s.a >= s.n,
            Criterion::Gradient { .. } => false,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GrowParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: f64,
    pub min_child_weight: f64,
    /// Features drawn per node; `None` uses all.
    pub max_features: Option<usize>,
}

impl GrowParams {
    fn admissible(&self, l: &Acc, r: &Acc) -> bool {
        l.n >= self.min_samples_leaf
            && r.n >= self.min_samples_leaf
            && match self.criterion {
                Criterion::Gradient { .. } => l.b >= self.min_child_weight && r.b >= self.min_child_weight,
                _ => true,
            }
    }
}

/// Row-major feature matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Matrix<'a> {
    pub data: &'a [f64],
    pub n: usize,
    pub m: usize,
}

impl<'a> Matrix<'a> {
    pub fn new(data: &'a [f64], n: usize, m: usize) -> Self {
        debug_assert_eq!(data.len(), n * m);
        Self { data, n, m }
    }

    #[inline]
    pub fn get(&self, i: usize, f: usize) -> f64 {
        self.data[i * self.m + f]
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }
}

/// Sample indices of every feature sorted by value (ties by index).
pub(crate) struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: &Matrix) -> Self {
        let order = (0..x.m)
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.n as u32).collect();
                idx.sort_by(|&a, &b| {
                    x.get(a as usize, f)
                        .total_cmp(&x.get(b as usize, f))
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { order }
    }
}

const NONE: u32 = u32::MAX;

/// Threshold strictly below `hi` and at least `lo`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t < hi {
        t
    } else {
        lo
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Acc,
}

/// Grows one tree level by level. At each level every open node takes the
/// (feature, midpoint) split with the largest gain; ties keep the earliest
/// feature and the lowest threshold. Samples with `n == 0` are ignored.
pub(crate) fn grow(x: &Matrix, sorted: &SortedColumns, stats: &[Acc], p: &GrowParams, mut rng: Option<&mut Rng>) -> Tree {
    let crit = p.criterion;
    let mut node_of = vec![NONE; x.n];
    let mut root = Acc::default();
    for (i, s) in stats.iter().enumerate() {
        if s.n > 0.0 {
            node_of[i] = 0;
            root += *s;
        }
    }
    let mut nodes = vec![Node::Leaf {
        value: crit.leaf_value(&root),
        cover: root.n,
    }];
    let mut node_stats = vec![root];
    let mut frontier = vec![0usize];
    let mut depth = 0usize;

    while !frontier.is_empty() && p.max_depth.map_or(true, |d| depth < d) {
        let open: Vec<usize> = frontier
            .iter()
            .copied()
            .filter(|&nd| {
                let s = &node_stats[nd];
                s.n >= 2.0 * p.min_samples_leaf && !crit.is_pure(s)
            })
            .collect();
        if open.is_empty() {
            break;
        }
        let mut slot = vec![NONE; nodes.len()];
        for (s, &nd) in open.iter().enumerate() {
            slot[nd] = s as u32;
        }
        let masks: Option<Vec<Vec<bool>>> = match (p.max_features, rng.as_deref_mut()) {
            (Some(k), Some(r)) if k < x.m => Some(
                open.iter()
                    .map(|_| {
                        let mut mask = vec![false; x.m];
                        for f in index::sample(r, x.m, k) {
                            mask[f] = true;
                        }
                        mask
                    })
                    .collect(),
            ),
            _ => None,
        };
        let parent_score: Vec<f64> = open.iter().map(|&nd| crit.score(&node_stats[nd])).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        let mut left = vec![Acc::default(); open.len()];
        let mut last = vec![f64::NAN; open.len()];

        for f in 0..x.m {
            left.iter_mut().for_each(|a| *a = Acc::default());
            for &i in &sorted.order[f] {
                let i = i as usize;
                let nd = node_of[i];
                if nd == NONE {
                    continue;
                }
                let s = slot[nd as usize];
                if s == NONE {
                    continue;
                }
                let s = s as usize;
                if let Some(m) = &masks {
                    if !m[s][f] {
                        continue;
                    }
                }
                let v = x.get(i, f);
                if left[s].n > 0.0 && v > last[s] {
                    let l = left[s];
                    let r = node_stats[open[s]] - l;
                    if p.admissible(&l, &r) {
                        let (sl, sr, sp) = (crit.score(&l), crit.score(&r), parent_score[s]);
                        let gain = sl + sr - sp;
                        let eps = 1e-12 * (1.0 + sl.abs() + sr.abs() + sp.abs());
                        // Impurity trees accept zero-gain splits (XOR needs one at the root).
                        let enough = match crit {
                            Criterion::Gradient { .. } => gain > eps,
                            _ => gain >= -eps,
                        };
                        if enough && best[s].map_or(true, |b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                feature: f,
                                threshold: midpoint(last[s], v),
                                gain,
                                left: l,
                            });
                        }
                    }
                }
                left[s] += stats[i];
                last[s] = v;
            }
        }

        let mut next = Vec::new();
        for (s, &nd) in open.iter().enumerate() {
            let Some(c) = best[s] else { continue };
            let l = c.left;
            let r = node_stats[nd] - l;
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf {
                value: crit.leaf_value(&l),
                cover: l.n,
            });
            nodes.push(Node::Leaf {
                value: crit.leaf_value(&r),
                cover: r.n,
            });
            node_stats.push(l);
            node_stats.push(r);
            nodes[nd] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left: li,
                right: ri,
                cover: node_stats[nd].n,
            };
            next.push(li);
            next.push(ri);
        }
        for (i, cell) in node_of.iter_mut().enumerate() {
            if *cell == NONE {
                continue;
            }
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = nodes[*cell as usize]
            {
                *cell = if x.get(i, feature) <= threshold { left } else { right } as u32;
            }
        }
        frontier = next;
        depth += 1;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_tree() -> Tree {
        // x0 <= 0.5 ? (x1 <= 2 ? 0.1 : 0.9) : 0.4
        Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    cover: 10.0,
                },
                Node::Split {
                    feature: 1,
                    threshold: 2.0,
                    left: 3,
                    right: 4,
                    cover: 6.0,
                },
                Node::Leaf { value: 0.4, cover: 4.0 },
                Node::Leaf { value: 0.1, cover: 3.0 },
                Node::Leaf { value: 0.9, cover: 3.0 },
            ],
        }
    }

    #[test]
    fn routing_by_hand() {
        let t = hand_tree();
        assert_eq!(t.predict(&[0.5, 2.0]), 0.1);
        assert_eq!(t.predict(&[0.2, 2.5]), 0.9);
        assert_eq!(t.predict(&[0.51, -9.0]), 0.4);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.split_features(), vec![0, 1]);
    }

    #[test]
    fn midpoint_stays_below_upper() {
        assert_eq!(midpoint(1.0, 2.0), 1.5);
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(t >= lo && t < hi);
    }

    #[test]
    fn grower_separates_threshold_data() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = Matrix::new(&xs, 6, 1);
        let sorted = SortedColumns::new(&m);
        let stats: Vec<Acc> = ys.iter().map(|&y| Acc { a: y, b: 0.0, n: 1.0 }).collect();
        let params = GrowParams {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_leaf: 1.0,
            min_child_weight: 0.0,
            max_features: None,
        };
        let t = grow(&m, &sorted, &stats, &params, None);
        assert_eq!(t.nodes.len(), 3);
        match t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 2.5),
            _ => panic!("expected split"),
        }
    }
}
