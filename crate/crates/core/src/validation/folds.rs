use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError};
use crate::rng;

/// Fold index per dataset position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub row_ids: Vec<usize>,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Row id to fold index.
    pub fn membership(&self) -> BTreeMap<usize, usize> {
        self.row_ids.iter().copied().zip(self.fold_of.iter().copied()).collect()
    }

    /// Positions outside and inside fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != f)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Shuffles each class with a seeded permutation and deals its members to
/// folds round-robin. The dealing position carries over from one class to
/// the next so fold sizes differ by at most one.
pub fn stratified_kfold(train: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
    if k < 2 {
        return Err(DatasetError::Shape(format!("fold count must be at least 2, got {k}")));
    }
    let classes = train.class_positions()?;
    for (class, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(DatasetError::ClassTooSmall {
                class: class as u8,
                count: members.len(),
                required: k,
            });
        }
    }
    let mut fold_of = vec![0; train.n_rows()];
    let mut deal = 0usize;
    for (class, members) in classes.into_iter().enumerate() {
        let mut members = members;
        members.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[0xf01d, class as u64])));
        for pos in members {
            fold_of[pos] = deal % k;
            deal += 1;
        }
    }
    Ok(FoldAssignment {
        k,
        seed,
        row_ids: train.row_ids().to_vec(),
        fold_of,
    })
}
