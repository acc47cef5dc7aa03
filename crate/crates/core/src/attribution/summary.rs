use serde::{Deserialize, Serialize};

use super::{Attribution, AttributionError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceTotal {
    pub row_id: usize,
    pub total: f64,
}

/// Per-feature mean |φ| and per-instance totals sorted from highest to lowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub features: Vec<String>,
    pub mean_abs: Vec<f64>,
    pub totals: Vec<InstanceTotal>,
    pub mean_baseline: f64,
    pub mean_prediction: f64,
}

impl AttributionSummary {
    pub fn top(&self) -> Option<&InstanceTotal> {
        self.totals.first()
    }

    pub fn bottom(&self) -> Option<&InstanceTotal> {
        self.totals.last()
    }

    /// Features ordered by mean |φ|, largest first; ties keep column order.
    pub fn feature_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.features.len()).collect();
        order.sort_by(|&a, &b| self.mean_abs[b].total_cmp(&self.mean_abs[a]).then(a.cmp(&b)));
        order
    }
}

/// Totals `Σφ` sorted descending (ties by ascending row id) and mean |φ| per
/// feature. Attributions without an instance id take their list position.
pub fn rank_instances(attributions: &[Attribution], features: &[String]) -> Result<AttributionSummary, AttributionError> {
    if attributions.is_empty() {
        return Err(AttributionError::Misaligned("no attributions to rank".into()));
    }
    if let Some(a) = attributions.iter().find(|a| a.values.len() != features.len()) {
        return Err(AttributionError::Misaligned(format!(
            "{} values for {} feature names",
            a.values.len(),
            features.len()
        )));
    }
    let n = attributions.len() as f64;
    let mut mean_abs = vec![0.0; features.len()];
    for a in attributions {
        for (m, v) in mean_abs.iter_mut().zip(&a.values) {
            *m += v.abs();
        }
    }
    mean_abs.iter_mut().for_each(|m| *m /= n);
    let mut totals: Vec<InstanceTotal> = attributions
        .iter()
        .enumerate()
        .map(|(k, a)| InstanceTotal {
            row_id: a.instance_id.unwrap_or(k),
            total: a.total(),
        })
        .collect();
    totals.sort_by(|a, b| b.total.total_cmp(&a.total).then(a.row_id.cmp(&b.row_id)));
    Ok(AttributionSummary {
        features: features.to_vec(),
        mean_abs,
        totals,
        mean_baseline: attributions.iter().map(|a| a.baseline).sum::<f64>() / n,
        mean_prediction: attributions.iter().map(|a| a.prediction).sum::<f64>() / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Summary,
    Decision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotEntry {
    pub feature: String,
    /// Raw feature value shown next to the feature (decision plots).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub shap: f64,
    /// Running total from the baseline (decision plots).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub kind: PlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<usize>,
    pub entries: Vec<PlotEntry>,
    pub baseline: f64,
    pub prediction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The `top` features by mean |φ|, largest first.
pub fn summary_plot_data(summary: &AttributionSummary, top: usize) -> PlotData {
    let mut warnings = Vec::new();
    let m = summary.features.len();
    if top > m {
        warnings.push(format!("requested top {top} of {m} features; showing {m}"));
    }
    let entries = summary
        .feature_order()
        .into_iter()
        .take(top.min(m))
        .map(|i| PlotEntry {
            feature: summary.features[i].clone(),
            value: None,
            shap: summary.mean_abs[i],
            cumulative: None,
        })
        .collect();
    PlotData {
        kind: PlotKind::Summary,
        instance_id: None,
        entries,
        baseline: summary.mean_baseline,
        prediction: summary.mean_prediction,
        warnings,
    }
}

/// Features by |φ| descending (ties keep column order) with running sums
/// from the baseline; the last running sum is `baseline + Σφ`.
pub fn decision_plot_data(attr: &Attribution, features: &[String], raw_values: &[String]) -> Result<PlotData, AttributionError> {
    if features.len() != attr.values.len() || raw_values.len() != attr.values.len() {
        return Err(AttributionError::Misaligned(format!(
            "{} values, {} feature names, {} raw values",
            attr.values.len(),
            features.len(),
            raw_values.len()
        )));
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| attr.values[b].abs().total_cmp(&attr.values[a].abs()).then(a.cmp(&b)));
    let mut running = attr.baseline;
    let entries = order
        .into_iter()
        .map(|i| {
            running += attr.values[i];
            PlotEntry {
                feature: features[i].clone(),
                value: Some(raw_values[i].clone()),
                shap: attr.values[i],
                cumulative: Some(running),
            }
        })
        .collect();
    Ok(PlotData {
        kind: PlotKind::Decision,
        instance_id: attr.instance_id,
        entries,
        baseline: attr.baseline,
        prediction: attr.prediction,
        warnings: Vec::new(),
    })
}
