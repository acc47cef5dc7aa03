//! Static SVG for plot-data documents: horizontal bars for summary plots,
//! a cumulative path for decision plots. Output depends only on the input.

use std::fmt::Write;

use skillshap_core::attribution::{PlotData, PlotKind};

use crate::PipelineError;

const WIDTH: f64 = 760.0;
const LEFT: f64 = 230.0;
const RIGHT: f64 = 40.0;
const TOP: f64 = 56.0;
const ROW: f64 = 24.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

struct Scale {
    lo: f64,
    hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64) -> Scale {
        if hi > lo && (hi - lo).is_finite() {
            Scale { lo, hi }
        } else {
            Scale { lo: lo - 1.0, hi: lo + 1.0 }
        }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.lo) / (self.hi - self.lo) * (WIDTH - LEFT - RIGHT)
    }
}

/// Renders a plot document. Coordinates use two decimals.
pub fn render_svg(plot: &PlotData) -> String {
    let rows = plot.entries.len().max(1) as f64;
    let height = TOP + rows * ROW + BOTTOM;
    let axis_y = TOP + rows * ROW;
    let (title, scale, caption) = match plot.kind {
        PlotKind::Summary => {
            let max = plot.entries.iter().map(|e| e.shap.abs()).fold(0.0, f64::max);
            (
                format!("Mean |SHAP| per feature (top {})", plot.entries.len()),
                Scale::new(0.0, max),
                "mean |SHAP value|".to_string(),
            )
        }
        PlotKind::Decision => {
            let mut lo = plot.baseline.min(plot.prediction);
            let mut hi = plot.baseline.max(plot.prediction);
            for c in plot.entries.iter().filter_map(|e| e.cumulative) {
                lo = lo.min(c);
                hi = hi.max(c);
            }
            let pad = 0.05 * (hi - lo);
            let title = match plot.instance_id {
                Some(id) => format!("Decision path for row {id}"),
                None => "Decision path".to_string(),
            };
            (title, Scale::new(lo - pad, hi + pad), "model output (raw)".to_string())
        }
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&title));
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{axis_y:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for k in 0..=TICKS {
        let v = scale.lo + (scale.hi - scale.lo) * k as f64 / TICKS as f64;
        let x = scale.x(v);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{x:.2}" y1="{axis_y:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            axis_y + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#,
            axis_y + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        axis_y + 40.0,
        escape(&caption)
    );
    for (k, e) in plot.entries.iter().enumerate() {
        let mid = TOP + (k as f64 + 0.5) * ROW;
        let label = match &e.value {
            Some(v) => format!("{} = {}", e.feature, v),
            None => e.feature.clone(),
        };
        let _ = writeln!(
            s,
            r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            mid + 4.0,
            escape(&label)
        );
        if plot.kind == PlotKind::Summary {
            let x0 = scale.x(0.0);
            let w = scale.x(e.shap.abs()) - x0;
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{x0:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="steelblue"/>"#,
                mid - ROW * 0.35,
                ROW * 0.7
            );
        }
    }
    if plot.kind == PlotKind::Decision {
        let bx = scale.x(plot.baseline);
        let _ = writeln!(
            s,
            r#"<line class="baseline" x1="{bx:.2}" y1="{TOP:.2}" x2="{bx:.2}" y2="{axis_y:.2}" stroke="gray" stroke-dasharray="4 3"/>"#
        );
        if !plot.entries.is_empty() {
            let mut points = vec![format!("{bx:.2},{TOP:.2}")];
            for (k, e) in plot.entries.iter().enumerate() {
                let c = e.cumulative.unwrap_or(f64::NAN);
                points.push(format!("{:.2},{:.2}", scale.x(c), TOP + (k as f64 + 0.5) * ROW));
            }
            points.push(format!("{:.2},{axis_y:.2}", scale.x(plot.prediction)));
            let _ = writeln!(
                s,
                r#"<polyline class="path" points="{}" fill="none" stroke="crimson" stroke-width="2"/>"#,
                points.join(" ")
            );
            for (k, e) in plot.entries.iter().enumerate() {
                let c = e.cumulative.unwrap_or(f64::NAN);
                let _ = writeln!(
                    s,
                    r#"<circle class="step" cx="{:.2}" cy="{:.2}" r="3" fill="crimson"><title>{} {:+.4}</title></circle>"#,
                    scale.x(c),
                    TOP + (k as f64 + 0.5) * ROW,
                    escape(&e.feature),
                    e.shap
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{bx:.2}" y="{:.2}" text-anchor="middle">baseline {:.4}</text>"#,
            TOP - 8.0,
            plot.baseline
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Parses a plot-data JSON document and renders it.
pub fn render_svg_json(text: &str) -> Result<String, PipelineError> {
    let plot: PlotData = serde_json::from_str(text).map_err(|e| PipelineError::Plot(e.to_string()))?;
    Ok(render_svg(&plot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use skillshap_core::attribution::PlotEntry;

    fn summary(n: usize) -> PlotData {
        PlotData {
            kind: PlotKind::Summary,
            instance_id: None,
            entries: (0..n)
                .map(|i| PlotEntry {
                    feature: format!("f<{i}>"),
                    value: None,
                    shap: 1.0 / (i + 1) as f64,
                    cumulative: None,
                })
                .collect(),
            baseline: 0.0,
            prediction: 0.0,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn one_bar_per_entry() {
        let svg = render_svg(&summary(3));
        assert_eq!(svg.matches(r#"class="bar""#).count(), 3);
        assert!(svg.contains("f&lt;0&gt;"));
    }

    #[test]
    fn empty_plot_has_axes_only() {
        for kind in [PlotKind::Summary, PlotKind::Decision] {
            let plot = PlotData { kind, ..summary(0) };
            let svg = render_svg(&plot);
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert_eq!(svg.matches(r#"class="axis""#).count(), 2);
            assert!(!svg.contains("class=\"bar\"") && !svg.contains("polyline"));
        }
    }

    #[test]
    fn decision_path_has_one_step_per_entry() {
        let plot = PlotData {
            kind: PlotKind::Decision,
            instance_id: Some(4),
            entries: vec![
                PlotEntry {
                    feature: "a".into(),
                    value: Some("1".into()),
                    shap: 0.5,
                    cumulative: Some(0.7),
                },
                PlotEntry {
                    feature: "b".into(),
                    value: Some("0".into()),
                    shap: -0.1,
                    cumulative: Some(0.6),
                },
            ],
            baseline: 0.2,
            prediction: 0.6,
            warnings: Vec::new(),
        };
        let svg = render_svg(&plot);
        assert_eq!(svg.matches(r#"class="step""#).count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("Decision path for row 4"));
        assert_eq!(svg, render_svg(&plot));
    }

    #[test]
    fn unknown_kind_rejected() {
        let text = r#"{"kind":"waterfall","entries":[],"baseline":0,"prediction":0}"#;
        assert!(matches!(render_svg_json(text), Err(PipelineError::Plot(_))));
        let ok = r#"{"kind":"summary","entries":[],"baseline":0,"prediction":0}"#;
        assert!(render_svg_json(ok).is_ok());
    }
}
