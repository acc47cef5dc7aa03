use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{FittedModel, Link, ModelConfig, ModelError, Parameters, ScoreKind, TrainingData};
use crate::dataset::Dataset;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "logistic" => Some(Activation::Logistic),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logistic => super::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
        }
    }
}

/// Dense layer; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Feed-forward network with a single logit output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub activation: Activation,
    pub layers: Vec<Layer>,
    /// Epochs actually run.
    pub epochs: usize,
    pub final_loss: f64,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn initialized(inputs: usize, hidden: &[usize], activation: Activation, seed: u64) -> MlpModel {
        let mut gen = rng::seeded(rng::derive_seed(seed, &[0x31f]));
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let limit = (6.0 / (i + o) as f64).sqrt();
                Layer {
                    inputs: i,
                    outputs: o,
                    weights: (0..i * o).map(|_| gen.random_range(-limit..=limit)).collect(),
                    bias: vec![0.0; o],
                }
            })
            .collect();
        MlpModel {
            activation,
            layers,
            epochs: 0,
            final_loss: f64::NAN,
        }
    }

    /// Activations of every layer, input first; the last entry is the logit.
    fn forward(&self, row: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![row.to_vec()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let a = &acts[k];
            let out: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let z = l.bias[o] + l.weights[o * l.inputs..(o + 1) * l.inputs].iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
                    if k == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.forward(row).last().expect("output layer")[0]
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn parameters_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_parameters_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_parameters());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }

    /// Mean logistic loss over `rows` plus `alpha / (2·|rows|) · ‖W‖²`, and its
    /// gradient in `parameters_flat` order. `x` is row-major with one row per
    /// entry of `y`.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[f64], alpha: f64) -> (f64, Vec<f64>) {
        let idx: Vec<usize> = (0..y.len()).collect();
        let mut grad = vec![0.0; self.n_parameters()];
        let loss = self.batch(x, y, &idx, alpha, &mut grad);
        (loss, grad)
    }

    fn batch(&self, x: &[f64], y: &[f64], idx: &[usize], alpha: f64, grad: &mut [f64]) -> f64 {
        let width = self.layers[0].inputs;
        let nb = idx.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let o = *at;
                *at += l.weights.len() + l.bias.len();
                Some(o)
            })
            .collect();
        let mut loss = 0.0;
        for &i in idx {
            let acts = self.forward(&x[i * width..(i + 1) * width]);
            let z = acts.last().expect("output")[0];
            let t = y[i];
            loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } - t * z;
            let mut delta = vec![(super::sigmoid(z) - t) / nb];
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let input = &acts[k];
                let off = offsets[k];
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad[off + o * l.inputs..off + (o + 1) * l.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[off + l.weights.len() + o] += d;
                }
                if k > 0 {
                    delta = (0..l.inputs)
                        .map(|j| {
                            let back: f64 = (0..l.outputs).map(|o| l.weights[o * l.inputs + j] * delta[o]).sum();
                            back * self.activation.derivative(input[j])
                        })
                        .collect();
                }
            }
        }
        loss /= nb;
        if alpha > 0.0 {
            let scale = alpha / nb;
            let mut sq = 0.0;
            for (l, &off) in self.layers.iter().zip(&offsets) {
                for (j, w) in l.weights.iter().enumerate() {
                    sq += w * w;
                    grad[off + j] += scale * w;
                }
            }
            loss += 0.5 * scale * sq;
        }
        loss
    }
}

/// Adam with mini-batches over a seeded per-epoch shuffle. Training stops
/// after `patience` epochs without the epoch loss improving by `tol`, or at
/// the epoch cap.
pub fn fit_mlp(train: &Dataset, config: &ModelConfig) -> Result<FittedModel, ModelError> {
    let data = TrainingData::new(train, config)?;
    let hidden = config.sizes_or("hidden_layer_sizes", &[100])?;
    if hidden.contains(&0) {
        return Err(ModelError::BadHyperparameter {
            name: "hidden_layer_sizes".into(),
            reason: "layer sizes must be positive".into(),
        });
    }
    let activation_name = config.text_or("activation", "relu")?;
    let activation = Activation::parse(activation_name).ok_or_else(|| ModelError::BadHyperparameter {
        name: "activation".into(),
        reason: format!("expected relu, tanh or logistic, got `{activation_name}`"),
    })?;
    let lr = config.f64_or("learning_rate_init", 1e-3)?;
    let batch_size = config.usize_or("batch_size", 32)?.max(1);
    let max_epochs = config.usize_or("max_epochs", 200)?;
    let patience = config.usize_or("patience", 10)?.max(1);
    let tol = config.f64_or("tol", 1e-4)?;
    let alpha = config.f64_or("alpha", 0.0)?;

    let (n, m) = (data.x.n, data.x.m);
    let mut model = MlpModel::initialized(m, &hidden, activation, config.seed);
    let mut gen = rng::seeded(rng::derive_seed(config.seed, &[0x5f1]));
    let mut params = model.parameters_flat();
    let p = params.len();
    let (mut m1, mut m2, mut grad) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = 0;
    let mut last_loss = f64::NAN;

    for epoch in 0..max_epochs {
        order.shuffle(&mut gen);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let loss = model.batch(data.x.data, &data.y, chunk, alpha, &mut grad);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            total += loss * chunk.len() as f64;
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for k in 0..p {
                m1[k] = b1 * m1[k] + (1.0 - b1) * grad[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * grad[k] * grad[k];
                params[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
            model.set_parameters_flat(&params);
        }
        epochs = epoch + 1;
        last_loss = total / n as f64;
        if !last_loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        if last_loss > best - tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(last_loss);
        if stale >= patience {
            break;
        }
    }
    model.epochs = epochs;
    model.final_loss = last_loss;
    Ok(FittedModel {
        config: config.clone(),
        feature_width: m,
        score_kind: ScoreKind::Probability,
        link: Link::Logistic,
        parameters: Parameters::Mlp(model),
    })
}
