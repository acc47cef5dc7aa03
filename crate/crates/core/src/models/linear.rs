use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Family, FittedModel, Link, ModelConfig, ModelError, Parameters, ScoreKind, TrainingData};
use crate::dataset::Dataset;

/// `margin(x) = intercept + Σ weights[i] · x[i]`. An empty weight vector is a
/// constant model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Weights padded with zeros to `width`, and the intercept.
    pub fn dense_weights(&self, width: usize) -> (Vec<f64>, f64) {
        let mut w = self.weights.clone();
        w.resize(width, 0.0);
        (w, self.intercept)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Penalty {
    L1,
    L2,
}

/// Objective `(1/n) Σ logloss + R(w) / (C n)` with `R = ½‖w‖²` (L2) or `‖w‖₁` (L1).
/// The intercept is the last coordinate and is never penalized.
struct Problem<'a> {
    data: &'a TrainingData<'a>,
    penalty: Penalty,
    reg: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.data.x.m + 1
    }

    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.data.x.m;
        (0..self.data.x.n)
            .map(|i| theta[m] + self.data.x.row(i).iter().zip(theta).map(|(x, w)| x * w).sum::<f64>())
            .collect()
    }

    fn l1(&self, theta: &[f64]) -> f64 {
        theta[..self.data.x.m].iter().map(|w| w.abs()).sum()
    }

    /// Smooth part of the objective.
    fn smooth(&self, theta: &[f64]) -> f64 {
        let n = self.data.x.n as f64;
        let loss: f64 = self
            .margins(theta)
            .iter()
            .zip(&self.data.y)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n;
        match self.penalty {
            Penalty::L2 => loss + 0.5 * self.reg * theta[..self.data.x.m].iter().map(|w| w * w).sum::<f64>(),
            Penalty::L1 => loss,
        }
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L2 => self.smooth(theta),
            Penalty::L1 => self.smooth(theta) + self.reg * self.l1(theta),
        }
    }

    /// Gradient and Hessian of the smooth part.
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (n, m, d) = (self.data.x.n, self.data.x.m, self.dim());
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut xi = vec![0.0; d];
        for (i, z) in self.margins(theta).into_iter().enumerate() {
            let p = super::sigmoid(z);
            let r = p - self.data.y[i];
            let wgt = p * (1.0 - p);
            xi[..m].copy_from_slice(self.data.x.row(i));
            xi[m] = 1.0;
            for a in 0..d {
                g[a] += r * xi[a];
                let wa = wgt * xi[a];
                if wa != 0.0 {
                    for b in a..d {
                        h[(a, b)] += wa * xi[b];
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        g *= inv_n;
        h *= inv_n;
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        if self.penalty == Penalty::L2 {
            for j in 0..m {
                g[j] += self.reg * theta[j];
                h[(j, j)] += self.reg;
            }
        }
        (g, h)
    }

    /// Infinity norm of the minimum-norm subgradient.
    fn optimality(&self, theta: &[f64], g: &DVector<f64>) -> f64 {
        let m = self.data.x.m;
        (0..self.dim())
            .map(|j| {
                if self.penalty == Penalty::L2 || j == m {
                    g[j].abs()
                } else if theta[j] != 0.0 {
                    (g[j] + self.reg * theta[j].signum()).abs()
                } else {
                    (g[j].abs() - self.reg).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Newton direction for the L2 problem.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let mut h = h.clone();
    let d = h.nrows();
    let mut ridge = 0.0;
    loop {
        if let Some(ch) = h.clone().cholesky() {
            return -ch.solve(g);
        }
        // Only the unpenalized intercept block can be singular; nudge the diagonal.
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
        for a in 0..d {
            h[(a, a)] += ridge;
        }
    }
}

/// Proximal Newton direction: coordinate descent on the quadratic model plus
/// the L1 term.
fn prox_newton_direction(theta: &[f64], g: &DVector<f64>, h: &DMatrix<f64>, reg: f64, m: usize) -> Vec<f64> {
    let d = theta.len();
    let mut delta = vec![0.0; d];
    let mut hd = vec![0.0; d];
    for _ in 0..200 {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let a = h[(j, j)].max(1e-12);
            let b = g[j] + hd[j];
            let z0 = theta[j] + delta[j];
            let z = if j == m { z0 - b / a } else { soft_threshold(a * z0 - b, reg) / a };
            let step = z - z0;
            if step != 0.0 {
                delta[j] += step;
                for k in 0..d {
                    hd[k] += h[(k, j)] * step;
                }
                max_change = max_change.max(step.abs() * a.sqrt());
            }
        }
        if max_change < 1e-12 {
            break;
        }
    }
    delta
}

/// Regularized logistic regression. L2 uses damped Newton steps; L1 uses
/// proximal Newton steps whose inner solve is soft-threshold coordinate
/// descent. Stops when the subgradient norm reaches `tol`.
pub fn fit_logistic_regression(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let c = config.f64_or("C", 1.0)?;
    if c <= 0.0 {
        return Err(ModelError::BadHyperparameter {
            name: "C".into(),
            reason: "must be positive".into(),
        });
    }
    let penalty = match config.text_or("penalty", "l2")? {
        "l1" => Penalty::L1,
        "l2" => Penalty::L2,
        other => {
            return Err(ModelError::BadHyperparameter {
                name: "penalty".into(),
                reason: format!("expected `l1` or `l2`, got `{other}`"),
            })
        }
    };
    let tol = config.f64_or("tol", 1e-6)?;
    let max_iter = config.usize_or("max_iter", 10_000)?;
    let m = data.x.m;
    let wrap = |model: LinearModel| FittedModel {
        config: config.clone(),
        feature_width: m,
        score_kind: ScoreKind::Probability,
        link: Link::Logistic,
        parameters: Parameters::Linear(model),
    };

    let rate = data.positive_rate();
    if rate == 0.0 || rate == 1.0 {
        let p = rate.clamp(1e-12, 1.0 - 1e-12);
        return Ok(wrap(LinearModel {
            weights: Vec::new(),
            intercept: (p / (1.0 - p)).ln(),
        }));
    }

    let problem = Problem {
        data: &data,
        penalty,
        reg: 1.0 / (c * data.x.n as f64),
    };
    let mut theta = vec![0.0; m + 1];
    theta[m] = (rate / (1.0 - rate)).ln();
    let mut f = problem.objective(&theta);
    let mut norm = f64::INFINITY;
    for _ in 0..max_iter {
        let (g, h) = problem.derivatives(&theta);
        norm = problem.optimality(&theta, &g);
        if norm <= tol {
            return Ok(wrap(LinearModel {
                weights: theta[..m].to_vec(),
                intercept: theta[m],
            }));
        }
        let delta: Vec<f64> = match penalty {
            Penalty::L2 => newton_direction(&g, &h).iter().copied().collect(),
            Penalty::L1 => prox_newton_direction(&theta, &g, &h, problem.reg, m),
        };
        // Armijo backtracking on the full objective.
        let decrease = {
            let lin: f64 = delta.iter().zip(g.iter()).map(|(d, g)| d * g).sum();
            match penalty {
                Penalty::L2 => lin,
                Penalty::L1 => {
                    let moved: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
                    lin + problem.reg * (problem.l1(&moved) - problem.l1(&theta))
                }
            }
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + step * d).collect();
            let fc = problem.objective(&cand);
            if fc <= f + 1e-4 * step * decrease.min(0.0) {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(ModelError::NotConverged {
        family: Family::LogisticRegression,
        iterations: max_iter,
        gradient_norm: norm,
    })
}
