use rand::seq::SliceRandom;

use super::{Dataset, DatasetError};
use crate::rng;

/// Stratified split. Each class sends `round(fraction * count)` rows (at least
/// one, at most `count - 1`) to the training side; which rows go is a seeded
/// shuffle. Both outputs keep the parent's row order.
pub fn split_train_test(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let classes = ds.class_positions()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, members) in classes.iter().enumerate() {
        if members.len() < 2 {
            return Err(DatasetError::ClassTooSmall {
                class: class as u8,
                count: members.len(),
                required: 2,
            });
        }
        let n = members.len();
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[0x5917, class as u64])));
        train.extend_from_slice(&shuffled[..n_train]);
        test.extend_from_slice(&shuffled[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let note = format!(
        "split_train_test fraction {fraction} seed {seed}: {} train / {} test",
        train.len(),
        test.len()
    );
    Ok((
        ds.select_rows(&train).with_provenance(note.clone()),
        ds.select_rows(&test).with_provenance(note),
    ))
}

/// Randomly drops majority-class rows until both classes have the minority
/// count. Minority rows are all kept; row order is preserved.
pub fn undersample(ds: &Dataset, seed: u64) -> Result<Dataset, DatasetError> {
    let [neg, pos] = ds.class_positions()?;
    for (class, members) in [(0u8, &neg), (1, &pos)] {
        if members.is_empty() {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: 0,
                required: 1,
            });
        }
    }
    let (minority, mut majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    if majority.len() > minority.len() {
        majority.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[0x0dd5])));
        majority.truncate(minority.len());
    }
    let mut keep = minority;
    keep.extend(majority);
    keep.sort_unstable();
    let n = keep.len();
    Ok(ds
        .select_rows(&keep)
        .with_provenance(format!("undersample seed {seed}: {} -> {n} rows", ds.n_rows())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VariableSpec;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn labeled(pos: usize, neg: usize) -> Dataset {
        let n = pos + neg;
        let rows = (0..n).map(|i| vec![i as f64]).collect();
        let target = (0..n).map(|i| u8::from(i % (n.max(1)) < pos)).collect();
        Dataset::from_rows(vec![VariableSpec::scalar("x")], rows)
            .unwrap()
            .with_target(target)
            .unwrap()
    }

    fn class_counts(ds: &Dataset) -> (usize, usize) {
        let t = ds.target().unwrap();
        let pos = t.iter().filter(|&&v| v == 1).count();
        (t.len() - pos, pos)
    }

    #[test]
    fn proportional_split() {
        let ds = labeled(40, 60);
        let (train, test) = split_train_test(&ds, 0.8, 1).unwrap();
        assert_eq!(class_counts(&train), (48, 32));
        assert_eq!(class_counts(&test), (12, 8));
    }

    #[test]
    fn five_per_class_rounding() {
        let ds = labeled(5, 5);
        let (train, test) = split_train_test(&ds, 0.8, 9).unwrap();
        assert_eq!(class_counts(&train), (4, 4));
        assert_eq!(class_counts(&test), (1, 1));
    }

    #[test]
    fn split_partitions_row_ids() {
        let ds = labeled(37, 81);
        let (train, test) = split_train_test(&ds, 0.8, 77).unwrap();
        let a: HashSet<usize> = train.row_ids().iter().copied().collect();
        let b: HashSet<usize> = test.row_ids().iter().copied().collect();
        assert!(a.is_disjoint(&b));
        let all: HashSet<usize> = ds.row_ids().iter().copied().collect();
        assert_eq!(&a | &b, all);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_train_test(&labeled(1, 10), 0.8, 0),
            Err(DatasetError::ClassTooSmall { class: 1, .. })
        ));
        assert!(matches!(
            split_train_test(&labeled(5, 5), 1.0, 0),
            Err(DatasetError::InvalidFraction(_))
        ));
        let unlabeled = Dataset::from_rows(vec![VariableSpec::scalar("x")], vec![vec![0.0]]).unwrap();
        assert!(matches!(split_train_test(&unlabeled, 0.5, 0), Err(DatasetError::MissingTarget)));
    }

    #[test]
    fn undersample_examples() {
        let ds = labeled(40, 60);
        let u = undersample(&ds, 3).unwrap();
        assert_eq!(class_counts(&u), (40, 40));
        let balanced = labeled(30, 30);
        let same = undersample(&balanced, 3).unwrap();
        assert_eq!(same.row_ids(), balanced.row_ids());
    }

    #[test]
    fn undersample_keeps_minority_and_subsets_majority() {
        let ds = labeled(25, 70);
        let u = undersample(&ds, 12).unwrap();
        let t = ds.target().unwrap();
        let orig_major: HashSet<usize> = (0..ds.n_rows()).filter(|&i| t[i] == 0).map(|i| ds.row_ids()[i]).collect();
        let orig_minor: HashSet<usize> = (0..ds.n_rows()).filter(|&i| t[i] == 1).map(|i| ds.row_ids()[i]).collect();
        let ut = u.target().unwrap();
        let kept_major: HashSet<usize> = (0..u.n_rows()).filter(|&i| ut[i] == 0).map(|i| u.row_ids()[i]).collect();
        let kept_minor: HashSet<usize> = (0..u.n_rows()).filter(|&i| ut[i] == 1).map(|i| u.row_ids()[i]).collect();
        assert!(kept_major.is_subset(&orig_major));
        assert_eq!(kept_minor, orig_minor);
    }

    proptest! {
        #[test]
        fn split_and_undersample_properties(pos in 2usize..80, neg in 2usize..80, seed in any::<u64>(), f in 0.05f64..0.95) {
            let ds = labeled(pos, neg);
            let (train, _) = split_train_test(&ds, f, seed).unwrap();
            let (tn, tp) = class_counts(&train);
            prop_assert!((tp as f64 - f * pos as f64).abs() <= 1.0);
            prop_assert!((tn as f64 - f * neg as f64).abs() <= 1.0);
            let again = split_train_test(&ds, f, seed).unwrap().0;
            prop_assert_eq!(again.row_ids(), train.row_ids());

            let u = undersample(&ds, seed).unwrap();
            let (un, up) = class_counts(&u);
            prop_assert_eq!(un, up);
            prop_assert_eq!(up, pos.min(neg));
        }
    }
}
