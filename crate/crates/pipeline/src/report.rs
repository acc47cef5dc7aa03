//! Cross-experiment tables assembled from finished bundles.

use std::fmt::Write;
use std::path::Path;

use crate::config::ExperimentName;
use crate::PipelineError;

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// `metrics.csv` rows of every experiment, prefixed by the experiment.
    pub csv: String,
    /// Fixed-width text: metric table plus the extreme ranked rows.
    pub text: String,
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), PipelineError> {
    let bad = |e: csv::Error| PipelineError::Bundle(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(bad)?;
    let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(bad)?;
    Ok((header, rows))
}

/// Combines the bundles found under `output`. Errors when none exists.
pub fn build_report(output: &Path) -> Result<Report, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut text = String::new();
    let mut found = 0;
    let mut header_written = false;
    for name in ExperimentName::ALL {
        let dir = output.join(name.name());
        let metrics = dir.join("metrics.csv");
        if !metrics.exists() {
            continue;
        }
        found += 1;
        let (header, rows) = read_csv(&metrics)?;
        if !header_written {
            let mut h = vec!["experiment".to_string()];
            h.extend(header.iter().cloned());
            w.write_record(&h).expect("in-memory write");
            header_written = true;
        }
        let _ = writeln!(text, "== {name}");
        let _ = writeln!(
            text,
            "{:<22} {:<9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "family", "test", "ACC", "RC", "PR", "SP", "F1S", "AUC"
        );
        let col = |n: &str| header.iter().position(|h| h == n);
        let metric_cols: Vec<usize> = ["ACC", "RC", "PR", "SP", "F1S", "AUC"].iter().filter_map(|n| col(n)).collect();
        for row in &rows {
            let mut rec = vec![name.name().to_string()];
            rec.extend(row.iter().cloned());
            w.write_record(&rec).expect("in-memory write");
            let get = |n: &str| col(n).and_then(|i| row.get(i)).map_or("", String::as_str);
            let _ = write!(text, "{:<22} {:<9}", get("family"), get("test"));
            for &c in &metric_cols {
                let v: f64 = row.get(c).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
                let _ = write!(text, " {v:>7.4}");
            }
            text.push('\n');
        }
        let ranking = dir.join("attribution").join("ranking.csv");
        if ranking.exists() {
            let (_, ranked) = read_csv(&ranking)?;
            if let (Some(first), Some(last)) = (ranked.first(), ranked.last()) {
                let _ = writeln!(text, "highest total SHAP: row {} ({}, {})", first[1], first[2], first[3]);
                let _ = writeln!(text, "lowest total SHAP:  row {} ({}, {})", last[1], last[2], last[3]);
            }
        }
        text.push('\n');
    }
    if found == 0 {
        return Err(PipelineError::Bundle(format!(
            "no experiment outputs under {}; run `skillshap run` first",
            output.display()
        )));
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    Ok(Report { csv, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combines_metric_tables() {
        let dir = tempfile::tempdir().unwrap();
        let exp = dir.path().join("low-high");
        std::fs::create_dir_all(exp.join("attribution")).unwrap();
        std::fs::write(
            exp.join("metrics.csv"),
            "family,config,test,rows,ACC,RC,PR,SP,F1S,AUC,TP,TN,FP,FN\nsvm,C=1,balanced,10,0.9,0.8,1,1,0.8888888888888889,0.95,4,5,0,1\n",
        )
        .unwrap();
        std::fs::write(
            exp.join("attribution/ranking.csv"),
            "rank,row_id,total_shap,category,level,score\n1,7,2.5,high,5,650\n2,3,-1,low,1,400\n",
        )
        .unwrap();
        let r = build_report(dir.path()).unwrap();
        assert!(r.csv.starts_with("experiment,family,config"));
        assert!(r.csv.contains("low-high,svm,C=1,balanced"));
        assert!(r.text.contains("0.8889"));
        assert!(r.text.contains("highest total SHAP: row 7"));
        assert!(r.text.contains("lowest total SHAP:  row 3"));
    }

    #[test]
    fn empty_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_report(dir.path()).is_err());
    }
}
