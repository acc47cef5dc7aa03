//! Planted-signal data generators used by tests, benchmarks and the demo
//! configuration.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{add_noise_control, bin_levels, Dataset, VariableSpec};
use crate::rng;

/// Score-generating model: `center + scale * Σ w_i (x_i - 0.5) + N(0, noise_sd)`.
#[derive(Clone, Debug)]
pub struct PlantedSignal {
    pub rows: usize,
    pub signal_weights: Vec<f64>,
    pub nuisance_weights: Vec<f64>,
    pub center: f64,
    pub scale: f64,
    pub noise_sd: f64,
    pub add_noise_column: bool,
}

impl Default for PlantedSignal {
    fn default() -> Self {
        Self {
            rows: 5_000,
            signal_weights: vec![2.0, -1.6, 1.4, -1.2, 1.0, 0.8],
            nuisance_weights: vec![0.3, -0.3, 0.3],
            center: 500.0,
            scale: 110.0,
            noise_sd: 12.0,
            add_noise_column: true,
        }
    }
}

impl PlantedSignal {
    /// Feature columns are scalars in `[0, 1]` named `SIG1..`, `NUI1..`, plus
    /// the Gaussian control column. Rows carry level labels from the score.
    pub fn generate(&self, seed: u64) -> Dataset {
        let mut gen = rng::seeded(rng::derive_seed(seed, &[0x51a7]));
        let eps = Normal::new(0.0, self.noise_sd).expect("finite sd");
        let mut schema = Vec::new();
        schema.extend((1..=self.signal_weights.len()).map(|k| VariableSpec::scalar_in(format!("SIG{k}"), 0.0, 1.0)));
        schema.extend((1..=self.nuisance_weights.len()).map(|k| VariableSpec::scalar_in(format!("NUI{k}"), 0.0, 1.0)));
        let weights: Vec<f64> = self
            .signal_weights
            .iter()
            .chain(&self.nuisance_weights)
            .copied()
            .collect();
        let mut rows = Vec::with_capacity(self.rows);
        let mut labels = Vec::with_capacity(self.rows);
        for _ in 0..self.rows {
            let x: Vec<f64> = (0..weights.len()).map(|_| gen.random::<f64>()).collect();
            let lin: f64 = x.iter().zip(&weights).map(|(v, w)| w * (v - 0.5)).sum();
            let score = self.center + self.scale * lin + eps.sample(&mut gen);
            labels.push(bin_levels(score).expect("finite score"));
            rows.push(x);
        }
        let ds = Dataset::from_rows(schema, rows)
            .expect("consistent shape")
            .with_labels(labels)
            .expect("one label per row")
            .with_provenance(format!("planted-signal generator seed {seed}"));
        if self.add_noise_column {
            add_noise_control(&ds, rng::derive_seed(seed, &[0x0015e]))
        } else {
            ds
        }
    }
}

/// Binary-target data: `y = 1[Σ w_i (x_i - 0.5) + N(0, sd) > 0]` with
/// `x ~ U(0,1)^m`. Weight `i` is `1 / (i + 1)`.
pub fn planted_binary(rows: usize, features: usize, label_noise_sd: f64, seed: u64) -> Dataset {
    let mut gen = rng::seeded(rng::derive_seed(seed, &[0xb1a7]));
    let schema = (0..features).map(|k| VariableSpec::scalar(format!("x{k}"))).collect();
    let mut data = Vec::with_capacity(rows);
    let mut target = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x: Vec<f64> = (0..features).map(|_| gen.random::<f64>()).collect();
        let noise = if label_noise_sd > 0.0 {
            Normal::new(0.0, label_noise_sd).expect("finite sd").sample(&mut gen)
        } else {
            0.0
        };
        let lin: f64 = x.iter().enumerate().map(|(i, v)| (v - 0.5) / (i + 1) as f64).sum::<f64>() + noise;
        target.push(u8::from(lin > 0.0));
        data.push(x);
    }
    Dataset::from_rows(schema, data)
        .expect("consistent shape")
        .with_target(target)
        .expect("one target per row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Category, NOISE_COLUMN};

    #[test]
    fn generator_is_deterministic_and_covers_categories() {
        let g = PlantedSignal {
            rows: 2_000,
            ..Default::default()
        };
        let a = g.generate(4);
        let b = g.generate(4);
        assert_eq!(a.values(), b.values());
        assert_eq!(a.n_cols(), 10);
        assert_eq!(a.column_names().last().unwrap(), NOISE_COLUMN);
        let labels = a.labels().unwrap();
        for cat in [Category::Low, Category::Medium, Category::High] {
            let n = labels.iter().filter(|l| l.category == cat).count();
            assert!(n > 100, "{cat:?} has only {n} rows");
        }
    }

    #[test]
    fn binary_generator_balanced_enough() {
        let ds = planted_binary(1000, 4, 0.1, 1);
        let pos = ds.target().unwrap().iter().filter(|&&t| t == 1).count();
        assert!((300..700).contains(&pos));
    }
}
