use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, Dataset, DatasetError, LevelLabel, VariableKind, VariableSpec};

const ROW_ID: &str = "row_id";
const SCORE: &str = "score";
const LEVEL: &str = "level";
const CATEGORY: &str = "category";
const TARGET: &str = "target";

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Cell texts (after trimming) that mark a missing value.
    pub missing_sentinels: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            missing_sentinels: vec![String::new()],
        }
    }
}

/// Reads a raw CSV restricted to the columns named in `schema`.
///
/// Extra file columns are ignored. Sentinel cells become missing (NaN);
/// categorical cells are stored as the index of their category token.
pub fn load_csv(path: &Path, schema: &[VariableSpec], opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    if sidecar_path(path).exists() {
        return Err(DatasetError::AlreadyPreprocessed(path.display().to_string()));
    }
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| DatasetError::Csv(e.to_string()))?.clone();
    let positions: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    if positions.contains_key(ROW_ID) {
        return Err(DatasetError::AlreadyPreprocessed(path.display().to_string()));
    }
    let mut source_cols = Vec::with_capacity(schema.len());
    for spec in schema {
        match positions.get(spec.name.as_str()) {
            Some(&i) => source_cols.push(i),
            None => return Err(DatasetError::MissingColumn(spec.name.clone())),
        }
    }

    let mut values = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        for (spec, &src) in schema.iter().zip(&source_cols) {
            let text = record.get(src).unwrap_or("").trim();
            values.push(parse_cell(text, spec, n, opts)?);
        }
        n += 1;
    }
    let ds = Dataset::from_parts(schema.to_vec(), values, (0..n).collect())?;
    Ok(ds.with_provenance(format!(
        "load {}: {n} rows x {} columns",
        path.display(),
        schema.len()
    )))
}

fn parse_cell(text: &str, spec: &VariableSpec, row: usize, opts: &LoadOptions) -> Result<f64, DatasetError> {
    if opts.missing_sentinels.iter().any(|s| s == text) {
        return Ok(f64::NAN);
    }
    let parse_err = || DatasetError::Parse {
        row,
        column: spec.name.clone(),
        text: text.to_string(),
    };
    if spec.is_encodable() {
        if let Some(k) = spec.categories.iter().position(|c| c == text) {
            return Ok(k as f64);
        }
        // Numeric codes match numerically ("1" == "1.0").
        if let Ok(v) = text.parse::<f64>() {
            let hit = spec
                .categories
                .iter()
                .position(|c| c.parse::<f64>().map_or(false, |cv| cv == v));
            if let Some(k) = hit {
                return Ok(k as f64);
            }
        }
        return Err(DatasetError::UnknownCategory {
            row,
            column: spec.name.clone(),
            text: text.to_string(),
        });
    }
    let v: f64 = text.parse().map_err(|_| parse_err())?;
    if !v.is_finite() {
        return Err(parse_err());
    }
    let range = match (spec.kind, spec.range) {
        (VariableKind::Binary, _) => Some([0.0, 1.0]),
        (_, r) => r,
    };
    if let Some([lo, hi]) = range {
        let binary_ok = spec.kind != VariableKind::Binary || v == 0.0 || v == 1.0;
        if v < lo || v > hi || !binary_ok {
            return Err(DatasetError::OutOfRange {
                row,
                column: spec.name.clone(),
                value: v,
                lo,
                hi,
            });
        }
    }
    Ok(v)
}

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros trimmed.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if (-5..17).contains(&exp) {
        let mut out = String::new();
        if exp < 0 {
            out.push_str("0.");
            out.extend(std::iter::repeat('0').take((-exp - 1) as usize));
            out.push_str(&digits);
        } else {
            let int_len = exp as usize + 1;
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
        let trimmed = out.trim_end_matches('0').trim_end_matches('.');
        format!("{sign}{trimmed}")
    } else {
        let (head, tail) = digits.split_at(1);
        let tail = tail.trim_end_matches('0');
        let exp_sign = if exp < 0 { '-' } else { '+' };
        if tail.is_empty() {
            format!("{sign}{head}e{exp_sign}{:02}", exp.abs())
        } else {
            format!("{sign}{head}.{tail}e{exp_sign}{:02}", exp.abs())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema: Vec<VariableSpec>,
    provenance: Vec<String>,
    labels: bool,
    target: bool,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

/// Writes `ds` as CSV plus a `<path>.schema.json` sidecar holding the schema
/// and provenance. [`read_dataset`] restores an equal dataset.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::Csv(e.to_string()))?;
    let mut header = vec![ROW_ID.to_string()];
    header.extend(ds.column_names());
    if ds.labels().is_some() {
        header.extend([SCORE, LEVEL, CATEGORY].map(String::from));
    }
    if ds.target().is_some() {
        header.push(TARGET.into());
    }
    w.write_record(&header).map_err(|e| DatasetError::Csv(e.to_string()))?;
    for i in 0..ds.n_rows() {
        let mut rec = vec![ds.row_ids()[i].to_string()];
        rec.extend(ds.row(i).iter().map(|&v| format_float(v)));
        if let Some(labels) = ds.labels() {
            let l = labels[i];
            rec.push(format_float(l.raw_score));
            rec.push(l.level.to_string());
            rec.push(l.category.name().into());
        }
        if let Some(t) = ds.target() {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec).map_err(|e| DatasetError::Csv(e.to_string()))?;
    }
    w.flush().map_err(io_err)?;
    let sidecar = Sidecar {
        schema: ds.schema().to_vec(),
        provenance: ds.provenance().to_vec(),
        labels: ds.labels().is_some(),
        target: ds.target().is_some(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), json + "\n").map_err(io_err)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|source| DatasetError::Io {
        path: side.display().to_string(),
        source,
    })?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| DatasetError::Schema(format!("{}: {e}", side.display())))?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| DatasetError::Csv(e.to_string()))?;
    let width = sidecar.schema.len();
    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut target = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let field = |k: usize, column: &str| -> Result<&str, DatasetError> {
            record.get(k).ok_or_else(|| DatasetError::Parse {
                row,
                column: column.into(),
                text: String::new(),
            })
        };
        let num = |k: usize, column: &str| -> Result<f64, DatasetError> {
            let t = field(k, column)?;
            if t.is_empty() {
                return Ok(f64::NAN);
            }
            t.parse().map_err(|_| DatasetError::Parse {
                row,
                column: column.into(),
                text: t.into(),
            })
        };
        ids.push(num(0, ROW_ID)? as usize);
        for (c, spec) in sidecar.schema.iter().enumerate() {
            values.push(num(c + 1, &spec.name)?);
        }
        let mut k = width + 1;
        if sidecar.labels {
            let raw_score = num(k, SCORE)?;
            let level = num(k + 1, LEVEL)? as u8;
            let cat_text = field(k + 2, CATEGORY)?;
            let category = Category::parse(cat_text).ok_or_else(|| DatasetError::Parse {
                row,
                column: CATEGORY.into(),
                text: cat_text.into(),
            })?;
            labels.push(LevelLabel {
                raw_score,
                level,
                category,
            });
            k += 3;
        }
        if sidecar.target {
            target.push(num(k, TARGET)? as u8);
        }
    }
    let mut ds = Dataset::from_parts(sidecar.schema, values, ids)?;
    ds.provenance = sidecar.provenance;
    if sidecar.labels {
        ds = ds.with_labels(labels)?;
    }
    if sidecar.target {
        ds = ds.with_target(target)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn schema() -> Vec<VariableSpec> {
        vec![
            VariableSpec::scalar_in("books", 1.0, 6.0),
            VariableSpec::categorical("sex", ["female", "male"]),
            VariableSpec::binary("desk"),
        ]
    }

    fn write_tmp(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let p = dir.path().join("raw.csv");
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_rows_loaded_with_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "desk,extra,sex,books\n1,x,female,2\n0,y,male,6\n1,z,female,1\n");
        let ds = load_csv(&p, &schema(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.row_ids(), &[0, 1, 2]);
        assert_eq!(ds.row(1), &[6.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_schema_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "books,sex\n2,male\n");
        match load_csv(&p, &schema(), &LoadOptions::default()) {
            Err(DatasetError::MissingColumn(c)) => assert_eq!(c, "desk"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparseable_cell_names_row_column_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "books,sex,desk\n2,male,1\nlots,male,1\n");
        match load_csv(&p, &schema(), &LoadOptions::default()) {
            Err(DatasetError::Parse { row, column, text }) => {
                assert_eq!((row, column.as_str(), text.as_str()), (1, "books", "lots"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_unknown_category() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "books,sex,desk\n9,male,1\n");
        assert!(matches!(
            load_csv(&p, &schema(), &LoadOptions::default()),
            Err(DatasetError::OutOfRange { .. })
        ));
        let p = write_tmp(&dir, "books,sex,desk\n2,other,1\n");
        assert!(matches!(
            load_csv(&p, &schema(), &LoadOptions::default()),
            Err(DatasetError::UnknownCategory { .. })
        ));
        let p = write_tmp(&dir, "books,sex,desk\n2,male,2\n");
        assert!(matches!(
            load_csv(&p, &schema(), &LoadOptions::default()),
            Err(DatasetError::OutOfRange { .. })
        ));
    }

    #[test]
    fn sentinel_is_missing_not_zero() {
        // Write a synthetic file with one sentinel, read it back.
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "books,sex,desk\n2,male,1\n99,female,0\n3,,1\n");
        let opts = LoadOptions {
            missing_sentinels: vec!["".into(), "99".into()],
        };
        let ds = load_csv(&p, &schema(), &opts).unwrap();
        assert!(ds.is_missing(1, 0));
        assert!(ds.is_missing(2, 1));
        assert!(!ds.is_missing(0, 0));
        let missing: usize = (0..3).map(|r| (0..3).filter(|&c| ds.is_missing(r, c)).count()).sum();
        assert_eq!(missing, 2);
    }

    #[test]
    fn numeric_category_codes_match_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "code\n1.0\n2\n");
        let spec = vec![VariableSpec::categorical("code", ["1", "2"])];
        let ds = load_csv(&p, &spec, &LoadOptions::default()).unwrap();
        assert_eq!(ds.column(0), vec![0.0, 1.0]);
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(500.0), "500");
        assert_eq!(format_float(0.1), "0.10000000000000001");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-08");
        assert_eq!(format_float(1e20), "1e+20");
        assert_eq!(format_float(f64::NAN), "");
    }

    proptest! {
        #[test]
        fn float_format_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let back: f64 = format_float(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_rows_with_ids(
            vec![VariableSpec::scalar("a"), VariableSpec::binary("b")],
            vec![vec![0.1, 1.0], vec![1.0 / 3.0, 0.0]],
            vec![7, 3],
        )
        .unwrap()
        .with_labels(vec![super::super::bin_levels(401.5).unwrap(), super::super::bin_levels(700.0).unwrap()])
        .unwrap()
        .with_target(vec![1, 0])
        .unwrap()
        .with_provenance("test");
        let p = dir.path().join("out.csv");
        write_dataset(&ds, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, ds);
        // A processed file is refused as raw input.
        assert!(matches!(
            load_csv(&p, ds.schema(), &LoadOptions::default()),
            Err(DatasetError::AlreadyPreprocessed(_))
        ));
    }
}
