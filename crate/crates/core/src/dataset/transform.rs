use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, VariableKind, VariableSpec};
use crate::rng;

pub const PLAUSIBLE_VALUE_COUNT: usize = 10;
pub const NOISE_COLUMN: &str = "GAUSSIAN_NOISE";

/// Number of rows per count of missing cells.
pub fn missing_histogram(ds: &Dataset) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for row in ds.rows() {
        let missing = row.iter().filter(|v| v.is_nan()).count();
        *hist.entry(missing).or_insert(0) += 1;
    }
    hist
}

/// Drops every row with at least one missing cell.
pub fn prune_missing(ds: &Dataset) -> Result<Dataset, DatasetError> {
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| ds.row(i).iter().all(|v| !v.is_nan()))
        .collect();
    if keep.is_empty() {
        return Err(DatasetError::EmptyAfterPrune);
    }
    let out = ds.select_rows(&keep);
    Ok(out.with_provenance(format!("prune_missing: {} -> {} rows", ds.n_rows(), keep.len())))
}

/// Per-row mean of the ten plausible-value columns.
pub fn average_plausible_values(ds: &Dataset, group: &[String]) -> Result<Vec<f64>, DatasetError> {
    if group.len() != PLAUSIBLE_VALUE_COUNT {
        return Err(DatasetError::PlausibleGroupSize {
            expected: PLAUSIBLE_VALUE_COUNT,
            got: group.len(),
        });
    }
    let cols = group
        .iter()
        .map(|g| ds.column_index(g).ok_or_else(|| DatasetError::UnknownColumn(g.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    (0..ds.n_rows())
        .map(|i| {
            let mut sum = 0.0;
            for (&c, name) in cols.iter().zip(group) {
                let v = ds.value(i, c);
                if v.is_nan() {
                    return Err(DatasetError::MissingPlausibleValue {
                        row: ds.row_ids()[i],
                        column: name.clone(),
                    });
                }
                sum += v;
            }
            Ok(sum / PLAUSIBLE_VALUE_COUNT as f64)
        })
        .collect()
}

/// Replaces each named categorical column by one indicator column per category.
pub fn one_hot_encode(ds: &Dataset, columns: &[String]) -> Result<Dataset, DatasetError> {
    for name in columns {
        let idx = ds.column_index(name).ok_or_else(|| DatasetError::UnknownColumn(name.clone()))?;
        let spec = &ds.schema()[idx];
        if !spec.is_encodable() || spec.kind == VariableKind::CategoricalLabel {
            return Err(DatasetError::NotCategorical(name.clone()));
        }
    }
    let mut schema = Vec::new();
    // (source column, Some(category) for an indicator)
    let mut plan: Vec<(usize, Option<usize>)> = Vec::new();
    for (c, spec) in ds.schema().iter().enumerate() {
        if columns.contains(&spec.name) {
            for (k, cat) in spec.categories.iter().enumerate() {
                schema.push(VariableSpec {
                    encoded_from: Some(spec.name.clone()),
                    ..VariableSpec::binary(format!("{}={}", spec.name, cat))
                });
                plan.push((c, Some(k)));
            }
        } else {
            schema.push(spec.clone());
            plan.push((c, None));
        }
    }
    let mut values = Vec::with_capacity(ds.n_rows() * schema.len());
    for (i, row) in ds.rows().enumerate() {
        for &(c, cat) in &plan {
            match cat {
                None => values.push(row[c]),
                Some(k) => {
                    let v = row[c];
                    let n_cats = ds.schema()[c].categories.len();
                    if v.is_nan() {
                        values.push(f64::NAN);
                    } else if v < 0.0 || v.fract() != 0.0 || v as usize >= n_cats {
                        return Err(DatasetError::UnknownCategory {
                            row: ds.row_ids()[i],
                            column: ds.schema()[c].name.clone(),
                            text: v.to_string(),
                        });
                    } else {
                        values.push(if v as usize == k { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    let width = schema.len();
    Ok(ds
        .with_columns(schema, values)
        .with_provenance(format!(
            "one_hot_encode {} columns: {} -> {width} columns",
            columns.len(),
            ds.n_cols()
        )))
}

/// Min-max bounds of the normalized-scalar columns, fitted on one split and
/// applied to any other split with clipping to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarNormalizer {
    pub columns: Vec<ScalarBounds>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarBounds {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ScalarNormalizer {
    pub fn fit(train: &Dataset) -> ScalarNormalizer {
        let columns = train
            .schema()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == VariableKind::NormalizedScalar)
            .map(|(c, s)| {
                let (min, max) = train
                    .rows()
                    .map(|r| r[c])
                    .filter(|v| !v.is_nan())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                ScalarBounds {
                    name: s.name.clone(),
                    min,
                    max,
                }
            })
            .collect();
        ScalarNormalizer { columns }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset, DatasetError> {
        let mut targets = Vec::with_capacity(self.columns.len());
        for b in &self.columns {
            let c = ds.column_index(&b.name).ok_or_else(|| DatasetError::UnknownColumn(b.name.clone()))?;
            targets.push((c, b));
        }
        let mut values = ds.values().to_vec();
        let w = ds.n_cols();
        for i in 0..ds.n_rows() {
            for &(c, b) in &targets {
                let cell = &mut values[i * w + c];
                if cell.is_nan() {
                    continue;
                }
                let span = b.max - b.min;
                *cell = if span > 0.0 && span.is_finite() {
                    ((*cell - b.min) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(ds
            .with_columns(ds.schema().to_vec(), values)
            .with_provenance(format!("normalize_scalars: {} columns", targets.len())))
    }
}

/// Fits min-max bounds on `ds` itself and applies them.
pub fn normalize_scalars(ds: &Dataset) -> Dataset {
    ScalarNormalizer::fit(ds)
        .apply(ds)
        .expect("bounds fitted on the same dataset")
}

/// Appends a standard-normal control column drawn from `seed`.
pub fn add_noise_control(ds: &Dataset, seed: u64) -> Dataset {
    let mut gen = rng::seeded(seed);
    let w = ds.n_cols();
    let mut values = Vec::with_capacity(ds.n_rows() * (w + 1));
    for row in ds.rows() {
        values.extend_from_slice(row);
        values.push(StandardNormal.sample(&mut gen));
    }
    let mut schema = ds.schema().to_vec();
    schema.push(VariableSpec::scalar(NOISE_COLUMN));
    ds.with_columns(schema, values)
        .with_provenance(format!("add_noise_control: seed {seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_ds(rows: Vec<Vec<f64>>) -> Dataset {
        let w = rows.first().map_or(1, Vec::len);
        let schema = (0..w).map(|c| VariableSpec::scalar(format!("x{c}"))).collect();
        Dataset::from_rows(schema, rows).unwrap()
    }

    #[test]
    fn histogram_counts() {
        let ds = scalar_ds(vec![vec![1.0, 2.0, 3.0, 4.0]; 5]);
        assert_eq!(missing_histogram(&ds), BTreeMap::from([(0, 5)]));
        let nan = f64::NAN;
        let ds = scalar_ds(vec![vec![1.0, 2.0, 3.0, 4.0], vec![nan, nan, 1.0, nan]]);
        assert_eq!(missing_histogram(&ds), BTreeMap::from([(0, 1), (3, 1)]));
    }

    #[test]
    fn histogram_matches_cell_scan() {
        let mut gen = rng::seeded(11);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..10).map(|_| if gen.random_bool(0.15) { f64::NAN } else { 1.0 }).collect())
            .collect();
        let mut oracle = BTreeMap::new();
        for r in &rows {
            let mut k = 0;
            for c in 0..10 {
                if r[c].is_nan() {
                    k += 1;
                }
            }
            *oracle.entry(k).or_insert(0usize) += 1;
        }
        let ds = scalar_ds(rows);
        let hist = missing_histogram(&ds);
        assert_eq!(hist, oracle);
        assert_eq!(hist.values().sum::<usize>(), 100);
    }

    #[test]
    fn prune_counts_and_idempotence() {
        let nan = f64::NAN;
        let mut rows = vec![vec![1.0, 2.0]; 10];
        for r in [1, 3, 4, 8] {
            rows[r][r % 2] = nan;
        }
        let ds = scalar_ds(rows);
        let pruned = prune_missing(&ds).unwrap();
        assert_eq!(pruned.n_rows(), 6);
        assert_eq!(pruned.row_ids(), &[0, 2, 5, 6, 7, 9]);
        let twice = prune_missing(&pruned).unwrap();
        assert_eq!(twice.values(), pruned.values());
        assert_eq!(twice.row_ids(), pruned.row_ids());
        // Parent untouched.
        assert!(ds.row(1)[1].is_nan());
    }

    #[test]
    fn prune_no_missing_is_identity() {
        let ds = scalar_ds(vec![vec![1.0], vec![2.0]]);
        let p = prune_missing(&ds).unwrap();
        assert_eq!(p.values(), ds.values());
        assert_eq!(p.row_ids(), ds.row_ids());
    }

    #[test]
    fn prune_everything_is_error() {
        let ds = scalar_ds(vec![vec![f64::NAN], vec![f64::NAN]]);
        assert!(matches!(prune_missing(&ds), Err(DatasetError::EmptyAfterPrune)));
    }

    fn pv_ds(rows: Vec<Vec<f64>>) -> (Dataset, Vec<String>) {
        let names: Vec<String> = (1..=10).map(|k| format!("PV{k}MATH")).collect();
        let schema = names.iter().map(VariableSpec::plausible_value).collect();
        (Dataset::from_rows(schema, rows).unwrap(), names)
    }

    #[test]
    fn plausible_value_means() {
        let (ds, names) = pv_ds(vec![vec![500.0; 10]]);
        assert_eq!(average_plausible_values(&ds, &names).unwrap(), vec![500.0]);
        let mut row = vec![500.0; 10];
        row[0] = 490.0;
        row[1] = 510.0;
        let (ds, names) = pv_ds(vec![row]);
        assert_eq!(average_plausible_values(&ds, &names).unwrap(), vec![500.0]);
        assert!(matches!(
            average_plausible_values(&ds, &names[..9]),
            Err(DatasetError::PlausibleGroupSize { got: 9, .. })
        ));
    }

    #[test]
    fn plausible_value_mean_matches_direct_sum() {
        let mut gen = rng::seeded(3);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| gen.random_range(200.0..800.0)).collect())
            .collect();
        let (ds, names) = pv_ds(rows.clone());
        let got = average_plausible_values(&ds, &names).unwrap();
        for (r, g) in rows.iter().zip(got) {
            let mut s = 0.0;
            for v in r {
                s += v;
            }
            assert!((s / 10.0 - g).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_sex_and_degenerate() {
        let schema = vec![
            VariableSpec::categorical("sex", ["male", "female"]),
            VariableSpec::categorical("only", ["x"]),
            VariableSpec::scalar("s"),
        ];
        let ds = Dataset::from_rows(schema, vec![vec![0.0, 0.0, 3.0], vec![1.0, 0.0, 4.0]]).unwrap();
        let enc = one_hot_encode(&ds, &["sex".into(), "only".into()]).unwrap();
        assert_eq!(enc.column_names(), vec!["sex=male", "sex=female", "only=x", "s"]);
        assert_eq!(enc.row(0), &[1.0, 0.0, 1.0, 3.0]);
        assert_eq!(enc.row(1), &[0.0, 1.0, 1.0, 4.0]);
        assert_eq!(enc.schema()[0].encoded_from.as_deref(), Some("sex"));
        assert!(one_hot_encode(&ds, &["s".into()]).is_err());
    }

    #[test]
    fn one_hot_seventeen_regions_row_sums() {
        let regions: Vec<String> = (1..=17).map(|k| format!("ESP{k:02}")).collect();
        let mut gen = rng::seeded(5);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![gen.random_range(0..17) as f64]).collect();
        let ds = Dataset::from_rows(vec![VariableSpec::categorical("STRATUM", regions)], rows).unwrap();
        let enc = one_hot_encode(&ds, &["STRATUM".into()]).unwrap();
        assert_eq!(enc.n_cols(), 17);
        for r in enc.rows() {
            assert_eq!(r.iter().sum::<f64>(), 1.0);
            assert!(r.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn one_hot_rejects_bad_code() {
        let ds = Dataset::from_rows(vec![VariableSpec::categorical("c", ["a", "b"])], vec![vec![2.0]]).unwrap();
        assert!(matches!(
            one_hot_encode(&ds, &["c".into()]),
            Err(DatasetError::UnknownCategory { .. })
        ));
    }

    #[test]
    fn min_max_examples() {
        let ds = scalar_ds(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0], vec![4.0, 5.0]]);
        let n = normalize_scalars(&ds);
        assert_eq!(n.column(0), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(n.column(1), vec![0.0; 4]);
    }

    #[test]
    fn held_out_values_clipped() {
        let train = scalar_ds(vec![vec![2.0], vec![4.0]]);
        let test = scalar_ds(vec![vec![1.0], vec![3.0], vec![9.0]]);
        let norm = ScalarNormalizer::fit(&train);
        assert_eq!(norm.apply(&test).unwrap().column(0), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn binary_columns_untouched_by_normalizer() {
        let ds = Dataset::from_rows(
            vec![VariableSpec::binary("b"), VariableSpec::scalar("s")],
            vec![vec![1.0, 10.0], vec![0.0, 20.0]],
        )
        .unwrap();
        let n = normalize_scalars(&ds);
        assert_eq!(n.column(0), vec![1.0, 0.0]);
        assert_eq!(n.column(1), vec![0.0, 1.0]);
    }

    #[test]
    fn noise_moments_and_determinism() {
        let ds = scalar_ds(vec![vec![0.0]; 100_000]);
        let a = add_noise_control(&ds, 2024);
        let b = add_noise_control(&ds, 2024);
        assert_eq!(a.values(), b.values());
        let col = a.column(1);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
        assert_eq!(a.column_names().last().unwrap(), NOISE_COLUMN);
    }

    #[test]
    fn noise_leaves_labels_alone() {
        let ds = scalar_ds(vec![vec![0.0]; 4])
            .with_labels(vec![super::super::bin_levels(400.0).unwrap(); 4])
            .unwrap()
            .with_target(vec![0, 1, 0, 1])
            .unwrap();
        let a = add_noise_control(&ds, 1);
        assert_eq!(a.labels(), ds.labels());
        assert_eq!(a.target(), ds.target());
        assert_eq!(a.column(0), ds.column(0));
    }

    proptest! {
        #[test]
        fn normalized_training_cells_in_unit_interval(
            rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..40)
        ) {
            let n = normalize_scalars(&scalar_ds(rows));
            prop_assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
