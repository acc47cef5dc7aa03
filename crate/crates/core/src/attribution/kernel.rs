use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;

use super::{check_width, coalition_value, Attribution, AttributionError, BackgroundSet, Method, ScoreFn};
use crate::rng;

/// `min(2^M, 2048)` coalitions.
pub fn default_budget(m: usize) -> usize {
    if m >= 11 {
        2048
    } else {
        1 << m
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coalitions (excluding empty and full) with their regression weights.
struct Design {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    index: HashMap<Vec<bool>, usize>,
}

impl Design {
    fn new() -> Self {
        Self {
            masks: Vec::new(),
            weights: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn add(&mut self, mask: Vec<bool>, weight: f64) {
        if let Some(&k) = self.index.get(&mask) {
            self.weights[k] += weight;
        } else {
            self.index.insert(mask.clone(), self.masks.len());
            self.masks.push(mask);
            self.weights.push(weight);
        }
    }

    fn len(&self) -> usize {
        self.masks.len()
    }
}

/// Calls `visit` with every size-`k` subset of `0..m` as a mask.
fn for_each_subset(m: usize, k: usize, mut visit: impl FnMut(Vec<bool>)) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut mask = vec![false; m];
        for &i in &idx {
            mask[i] = true;
        }
        visit(mask);
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < m - k + p) else { return };
        idx[pos] += 1;
        for p in pos + 1..k {
            idx[p] = idx[p - 1] + 1;
        }
    }
}

fn complement(mask: &[bool]) -> Vec<bool> {
    mask.iter().map(|b| !b).collect()
}

/// Every non-trivial coalition with weight `(M−1)/(C(M,s)·s·(M−s))`.
fn full_design(m: usize) -> Design {
    let mut d = Design::new();
    for s in 1..m {
        let w = (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64);
        for_each_subset(m, s, |mask| d.add(mask, w));
    }
    d
}

/// Enumerates whole coalition sizes (paired with their complements) while the
/// budget covers them, then samples the remaining sizes in proportion to
/// their kernel weight, adding each draw together with its complement.
fn sampled_design(m: usize, budget: usize, seed: u64) -> Design {
    // Sizes 1..=n_sizes; sizes up to n_paired stand for themselves and M−k.
    let n_sizes = (m - 1).div_ceil(2);
    let n_paired = (m - 1) / 2;
    let mut size_weight: Vec<f64> = (1..=n_sizes)
        .map(|k| {
            let w = (m - 1) as f64 / (k * (m - k)) as f64;
            if k <= n_paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let total: f64 = size_weight.iter().sum();
    size_weight.iter_mut().for_each(|w| *w /= total);

    let mut d = Design::new();
    let mut remaining = budget as f64;
    let mut share = size_weight.clone();
    let mut n_full = 0;
    for k in 1..=n_sizes {
        let paired = k <= n_paired;
        let count = binomial(m, k) * if paired { 2.0 } else { 1.0 };
        if remaining * share[k - 1] / count < 1.0 - 1e-8 {
            break;
        }
        n_full += 1;
        remaining -= count;
        if share[k - 1] < 1.0 {
            let rest = 1.0 - share[k - 1];
            share.iter_mut().for_each(|w| *w /= rest);
        }
        let w = size_weight[k - 1] / count;
        for_each_subset(m, k, |mask| {
            if paired {
                d.add(complement(&mask), w);
            }
            d.add(mask, w);
        });
    }

    let left = budget.saturating_sub(d.len());
    if n_full < n_sizes && left > 0 {
        let fixed = d.len();
        let rest: Vec<f64> = size_weight[n_full..].to_vec();
        let rest_total: f64 = rest.iter().sum();
        let mut gen = rng::seeded(rng::derive_seed(seed, &[0x5a4d]));
        let mut attempts = 0;
        while d.len() < fixed + left && attempts < 100 * budget {
            attempts += 1;
            let mut u = gen.random::<f64>() * rest_total;
            let mut k = n_full + 1;
            for (j, w) in rest.iter().enumerate() {
                k = n_full + 1 + j;
                if u < *w {
                    break;
                }
                u -= w;
            }
            let mut mask = vec![false; m];
            for i in index::sample(&mut gen, m, k) {
                mask[i] = true;
            }
            let comp = complement(&mask);
            d.add(mask, 1.0);
            if d.len() < fixed + left {
                d.add(comp, 1.0);
            }
        }
        let sampled: f64 = d.weights[fixed..].iter().sum();
        let leftover: f64 = size_weight[n_full..].iter().sum();
        if sampled > 0.0 {
            d.weights[fixed..].iter_mut().for_each(|w| *w *= leftover / sampled);
        }
    }
    d
}

/// Kernel SHAP: weighted least squares over coalitions with the efficiency
/// constraint eliminated exactly. A budget of at least `2^M − 2` enumerates
/// every coalition and reproduces exact Shapley values; smaller budgets
/// sample coalitions deterministically from `seed`.
pub fn kernel_shap(
    model: &dyn ScoreFn,
    x: &[f64],
    bg: &BackgroundSet,
    budget: usize,
    seed: u64,
) -> Result<Attribution, AttributionError> {
    check_width(model, x, bg)?;
    let m = x.len();
    let mut buf = Vec::with_capacity(m);
    let baseline = coalition_value(model, x, &vec![false; m], bg, &mut buf);
    let prediction = model.eval(x);
    let delta = prediction - baseline;
    if m <= 1 {
        let values = if m == 1 { vec![delta] } else { Vec::new() };
        let mut a = Attribution::new(Method::Kernel, values, baseline, prediction);
        a.fit_error = Some(0.0);
        return Ok(a);
    }
    if budget < m + 2 {
        return Err(AttributionError::BudgetTooSmall { budget, minimum: m + 2 });
    }
    let enumerable = m < 31 && budget >= (1usize << m) - 2;
    let design = if enumerable { full_design(m) } else { sampled_design(m, budget, seed) };

    // Substitute φ_{M−1} = Δ − Σ_{i<M−1} φ_i and solve the reduced problem.
    let rows = design.len();
    let p = m - 1;
    let mut a = DMatrix::zeros(rows, p);
    let mut t = DVector::zeros(rows);
    for (r, (mask, &w)) in design.masks.iter().zip(&design.weights).enumerate() {
        let sw = w.sqrt();
        let zl = f64::from(u8::from(mask[p]));
        let y = coalition_value(model, x, mask, bg, &mut buf) - baseline;
        for i in 0..p {
            a[(r, i)] = sw * (f64::from(u8::from(mask[i])) - zl);
        }
        t[r] = sw * (y - zl * delta);
    }
    if rows < p {
        return Err(AttributionError::SingularDesign);
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * scale.max(1e-300)) {
        return Err(AttributionError::SingularDesign);
    }
    let qt = qr.q().transpose() * &t;
    let head = r.solve_upper_triangular(&qt).ok_or(AttributionError::SingularDesign)?;
    let mut values: Vec<f64> = head.iter().copied().collect();
    values.push(delta - values.iter().sum::<f64>());
    let resid = &a * &head - &t;
    let wsum: f64 = design.weights.iter().sum();
    let mut attr = Attribution::new(Method::Kernel, values, baseline, prediction);
    attr.fit_error = Some((resid.norm_squared() / wsum).sqrt());
    Ok(attr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{exact_shapley, linear_shap, FnModel};
    use crate::dataset::synthetic::planted_binary;
    use crate::models::{fit, Family, HyperValue, ModelConfig};

    #[test]
    fn subset_enumeration_counts() {
        for m in 1..9 {
            for k in 0..=m {
                let mut n = 0;
                for_each_subset(m, k, |mask| {
                    assert_eq!(mask.iter().filter(|&&b| b).count(), k);
                    n += 1;
                });
                assert_eq!(n as f64, binomial(m, k));
            }
        }
    }

    #[test]
    fn full_budget_equals_exact() {
        let model = FnModel {
            width: 5,
            f: |r: &[f64]| r[0] * r[1] - (r[2] * 2.0).sin() + r[3] * r[3] * r[4],
        };
        let bg = BackgroundSet::new(vec![
            vec![0.1, 0.9, -0.3, 0.4, 1.0],
            vec![-0.5, 0.2, 0.8, -1.0, 0.3],
            vec![0.7, -0.6, 0.1, 0.5, -0.2],
        ])
        .unwrap();
        let x = [1.0, -1.0, 0.5, 2.0, 0.7];
        let k = kernel_shap(&model, &x, &bg, 32, 0).unwrap();
        let e = exact_shapley(&model, &x, &bg).unwrap();
        for (a, b) in k.values.iter().zip(&e.values) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        assert!(k.residual <= 1e-12);
    }

    #[test]
    fn single_feature_ignores_budget() {
        let model = FnModel { width: 1, f: |r: &[f64]| 3.0 * r[0] };
        let bg = BackgroundSet::new(vec![vec![1.0], vec![3.0]]).unwrap();
        let a = kernel_shap(&model, &[4.0], &bg, 0, 0).unwrap();
        assert_eq!(a.values, vec![6.0]);
    }

    #[test]
    fn budget_floor() {
        let model = FnModel { width: 4, f: |r: &[f64]| r[0] };
        let bg = BackgroundSet::new(vec![vec![0.0; 4]]).unwrap();
        assert!(matches!(
            kernel_shap(&model, &[1.0; 4], &bg, 5, 0),
            Err(AttributionError::BudgetTooSmall { budget: 5, minimum: 6 })
        ));
    }

    #[test]
    fn sampled_linear_model_recovers_linear_shap() {
        let ds = planted_binary(300, 14, 0.5, 3);
        let model = fit(&ds, &ModelConfig::new(Family::LogisticRegression, 0).with("C", HyperValue::Float(1.0))).unwrap();
        let bg = BackgroundSet::sample(&ds, 30, 2).unwrap();
        let x = ds.row(5);
        let k = kernel_shap(&model, x, &bg, 600, 11).unwrap();
        let l = linear_shap(&model, x, &bg).unwrap();
        for (a, b) in k.values.iter().zip(&l.values) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        assert!(k.residual <= 1e-9);
    }

    #[test]
    fn sampling_is_reproducible() {
        let model = FnModel {
            width: 12,
            f: |r: &[f64]| r.iter().enumerate().map(|(i, v)| v * v * i as f64).sum::<f64>() + r[0] * r[5],
        };
        let bg = BackgroundSet::new(vec![vec![0.5; 12], vec![-0.25; 12]]).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 7.0).collect();
        let a = kernel_shap(&model, &x, &bg, 300, 4).unwrap();
        let b = kernel_shap(&model, &x, &bg, 300, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.residual <= 1e-9);
        let c = kernel_shap(&model, &x, &bg, 300, 5).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn sampled_design_respects_budget() {
        for (m, budget) in [(12, 300), (20, 2048), (7, 40), (30, 100)] {
            let d = sampled_design(m, budget, 1);
            assert!(d.len() <= budget, "m={m}: {} > {budget}", d.len());
            assert!(d.weights.iter().all(|&w| w > 0.0));
        }
    }
}
