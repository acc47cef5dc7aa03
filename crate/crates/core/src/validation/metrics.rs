use serde::{Deserialize, Serialize};

use super::ValidationError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[u8], actual: &[u8]) -> Result<Self, ValidationError> {
        if predicted.len() != actual.len() {
            return Err(ValidationError::LengthMismatch {
                scores: predicted.len(),
                labels: actual.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p != 0, a != 0) {
                (true, true) => cm.tp += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(TP+TN)/(TP+TN+FP+FN)`; `None` on an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp + cm.tn, cm.total())
}

/// `TP/(TP+FN)`
pub fn recall(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// `TP/(TP+FP)`
pub fn precision(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fp)
}

/// `TN/(TN+FP)`
pub fn specificity(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tn, cm.tn + cm.fp)
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn f1(cm: &ConfusionMatrix) -> Option<f64> {
    f1_from(precision(cm)?, recall(cm)?)
}

/// Area under the ROC curve as the Mann-Whitney statistic with midranks for
/// tied scores. Label 1 is the positive class.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, ValidationError> {
    if scores.len() != labels.len() {
        return Err(ValidationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ValidationError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ValidationError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)).clamp(0.0, 1.0))
}

/// The six reported metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "RC")]
    pub rc: f64,
    #[serde(rename = "PR")]
    pub pr: f64,
    #[serde(rename = "SP")]
    pub sp: f64,
    #[serde(rename = "F1S")]
    pub f1: f64,
    #[serde(rename = "AUC")]
    pub auc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 6] = ["ACC", "RC", "PR", "SP", "F1S", "AUC"];

    pub fn values(&self) -> [f64; 6] {
        [self.acc, self.rc, self.pr, self.sp, self.f1, self.auc]
    }

    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            acc: sum(|m| m.acc),
            rc: sum(|m| m.rc),
            pr: sum(|m| m.pr),
            sp: sum(|m| m.sp),
            f1: sum(|m| m.f1),
            auc: sum(|m| m.auc),
        }
    }
}

/// Metrics, confusion matrix, and a note for every metric whose denominator
/// was zero (reported as 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Evaluation {
    /// Thresholds `scores` at `threshold` (score ≥ threshold is positive).
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Evaluation, ValidationError> {
        let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let confusion = ConfusionMatrix::from_predictions(&predicted, labels)?;
        let auc = roc_auc(scores, labels)?;
        let mut warnings = Vec::new();
        let mut take = |name: &str, v: Option<f64>, den: &str| {
            v.unwrap_or_else(|| {
                warnings.push(format!("{name}: zero denominator ({den} = 0), reported as 0"));
                0.0
            })
        };
        let acc = take("ACC", accuracy(&confusion), "TP+TN+FP+FN");
        let rc = take("RC", recall(&confusion), "TP+FN");
        let pr = take("PR", precision(&confusion), "TP+FP");
        let sp = take("SP", specificity(&confusion), "TN+FP");
        let f1 = take("F1S", f1_from(pr, rc), "PR+RC");
        Ok(Evaluation {
            metrics: Metrics {
                acc,
                rc,
                pr,
                sp,
                f1,
                auc,
            },
            confusion,
            warnings,
        })
    }
}
