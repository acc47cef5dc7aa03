use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Family, FittedModel, Link, ModelConfig, ModelError, Parameters, ScoreKind, TrainingData};
use crate::dataset::Dataset;

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 128 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma ‖x − z‖²)`
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// `decision(x) = Σ coef_i K(sv_i, x) + intercept`, where `coef_i = α_i y_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Primal weights, present for the linear kernel.
    pub weights: Option<Vec<f64>>,
}

impl SvmModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        if let Some(w) = &self.weights {
            return self.intercept + w.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        }
        self.intercept
            + self
                .support_vectors
                .iter()
                .zip(&self.coef)
                .map(|(sv, c)| c * self.kernel.eval(sv, row))
                .sum::<f64>()
    }

    pub fn linear_weights(&self) -> Option<(Vec<f64>, f64)> {
        self.weights.as_ref().map(|w| (w.clone(), self.intercept))
    }
}

/// Kernel rows computed on demand, evicted least-recently-used.
struct KernelCache<'a> {
    x: &'a super::tree::Matrix<'a>,
    kernel: Kernel,
    rows: HashMap<usize, (u64, Vec<f64>)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a super::tree::Matrix<'a>, kernel: Kernel) -> Self {
        let capacity = (CACHE_BYTES / (8 * x.n.max(1))).max(2);
        Self {
            x,
            kernel,
            rows: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                let oldest = *self
                    .rows
                    .iter()
                    .min_by_key(|(_, (t, _))| *t)
                    .map(|(k, _)| k)
                    .expect("cache is non-empty");
                self.rows.remove(&oldest);
            }
            let xi = self.x.row(i);
            let r = (0..self.x.n).map(|j| self.kernel.eval(xi, self.x.row(j))).collect();
            self.rows.insert(i, (clock, r));
        }
        let entry = self.rows.get_mut(&i).expect("row just inserted");
        entry.0 = clock;
        &entry.1
    }
}

/// Dual solution: `α`, bias, and whether the KKT gap closed.
struct Solution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
    gap: f64,
    converged: bool,
}

/// Solves `min ½ αᵀQα − Σα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K_ij`, by SMO with second-order working-set selection.
fn solve_dual(x: &super::tree::Matrix, y: &[f64], kernel: Kernel, c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = x.n;
    let mut cache = KernelCache::new(x, kernel);
    let diag: Vec<f64> = (0..n).map(|i| kernel.eval(x.row(i), x.row(i))).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;

    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                if -y[t] * grad[t] > gmax || i == usize::MAX {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || gap < tol {
            converged = true;
            break;
        }
        let ki: Vec<f64> = cache.row(i).to_vec();
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = diag[i] + diag[t] - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        let kj: Vec<f64> = cache.row(j).to_vec();
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        iterations += 1;
    }

    // Bias: average over free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else {
        0.0
    };
    Solution {
        alpha,
        bias: -rho,
        iterations,
        gap,
        converged,
    }
}

/// `1 / (M · mean per-feature variance)` over the training matrix.
fn scale_gamma(x: &super::tree::Matrix) -> f64 {
    let (n, m) = (x.n as f64, x.m);
    if m == 0 || x.n == 0 {
        return 1.0;
    }
    let mean_var = (0..m)
        .map(|f| {
            let mean = (0..x.n).map(|i| x.get(i, f)).sum::<f64>() / n;
            (0..x.n).map(|i| (x.get(i, f) - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / m as f64;
    if mean_var > 0.0 {
        1.0 / (m as f64 * mean_var)
    } else {
        1.0
    }
}

/// Soft-margin kernel SVM. The score is the signed decision value.
pub fn fit_svm(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let c = config.f64_or("C", 1.0)?;
    if c <= 0.0 {
        return Err(ModelError::BadHyperparameter {
            name: "C".into(),
            reason: "must be positive".into(),
        });
    }
    let kernel = match config.text_or("kernel", "rbf")? {
        "linear" => Kernel::Linear,
        "rbf" => {
            let gamma = match config.hyperparameters.get("gamma") {
                None => scale_gamma(&data.x),
                Some(_) => config.f64_or("gamma", 0.0)?,
            };
            if gamma <= 0.0 {
                return Err(ModelError::BadHyperparameter {
                    name: "gamma".into(),
                    reason: "must be positive".into(),
                });
            }
            Kernel::Rbf { gamma }
        }
        other => {
            return Err(ModelError::BadHyperparameter {
                name: "kernel".into(),
                reason: format!("expected `linear` or `rbf`, got `{other}`"),
            })
        }
    };
    let tol = config.f64_or("tol", 1e-3)?;
    let max_iter = config.usize_or("max_iter", 1_000_000.max(100 * data.x.n))?;
    let y: Vec<f64> = data.y.iter().map(|&v| if v > 0.5 { 1.0 } else { -1.0 }).collect();
    let m = data.x.m;

    let sol = solve_dual(&data.x, &y, kernel, c, tol, max_iter);
    if !sol.converged {
        return Err(ModelError::NotConverged {
            family: Family::Svm,
            iterations: sol.iterations,
            gradient_norm: sol.gap,
        });
    }
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(data.x.row(i).to_vec());
            coef.push(a * y[i]);
        }
    }
    let weights = (kernel == Kernel::Linear).then(|| {
        let mut w = vec![0.0; m];
        for (sv, c) in support_vectors.iter().zip(&coef) {
            for (wj, xj) in w.iter_mut().zip(sv) {
                *wj += c * xj;
            }
        }
        w
    });
    Ok(FittedModel {
        config: config.clone(),
        feature_width: m,
        score_kind: ScoreKind::Margin,
        link: Link::Identity,
        parameters: Parameters::Svm(SvmModel {
            kernel,
            support_vectors,
            coef,
            intercept: sol.bias,
            weights,
        }),
    })
}
