//! Report rendering: the per-species AP table (one AP column per model,
//! final mAP row), its JSON twin, and plot-ready curve text.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use fishdet_core::eval::{CheckpointSeries, EvalReport};
use serde::{Deserialize, Serialize};

/// One evaluated model in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub report: EvalReport,
}

/// Machine-readable twin of [`render_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub iou_thresh: f64,
    pub comparison: String,
    pub method: String,
    pub class_filter: Option<Vec<String>>,
    pub min_count: Option<usize>,
    pub models: Vec<ModelReport>,
}

impl ReportDocument {
    /// All models must share one evaluation config.
    pub fn new(models: Vec<ModelReport>) -> Self {
        let cfg = models
            .first()
            .map(|m| m.report.config.clone())
            .unwrap_or_default();
        ReportDocument {
            iou_thresh: cfg.iou_thresh,
            comparison: cfg.comparison.symbol().into(),
            method: cfg.method.as_str().into(),
            class_filter: cfg.classes,
            min_count: cfg.min_count,
            models,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report types serialize");
        s.push('\n');
        s
    }
}

pub fn ap3(v: f64) -> String {
    format!("{v:.3}")
}

/// Species rows by model columns, three-decimal APs, then the mAP row.
/// A species a model did not evaluate shows `-`.
pub fn render_table(doc: &ReportDocument) -> String {
    let species: BTreeSet<&str> = doc
        .models
        .iter()
        .flat_map(|m| m.report.classes.iter().map(|c| c.label.as_str()))
        .collect();
    let headers: Vec<String> = if doc.models.len() == 1 {
        vec!["AP".into()]
    } else {
        doc.models.iter().map(|m| format!("AP on {}", m.name)).collect()
    };
    let first = species.iter().map(|s| s.len()).max().unwrap_or(0).max("Species".len());
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(5)).collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# IoU {} {}, AP method {}{}{}",
        doc.comparison,
        doc.iou_thresh,
        doc.method,
        doc.min_count.map_or(String::new(), |n| format!(", min_count {n}")),
        doc.class_filter
            .as_ref()
            .map_or(String::new(), |c| format!(", classes {}", c.join(","))),
    );
    let row = |out: &mut String, name: &str, cells: &[String]| {
        let _ = write!(out, "{name:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    };
    row(&mut out, "Species", &headers);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    row(&mut out, &"-".repeat(first), &rule);
    for s in &species {
        let cells: Vec<String> = doc
            .models
            .iter()
            .map(|m| m.report.class(s).map_or("-".into(), |c| ap3(c.ap)))
            .collect();
        row(&mut out, s, &cells);
    }
    let maps: Vec<String> = doc.models.iter().map(|m| ap3(m.report.map)).collect();
    row(&mut out, "mAP", &maps);
    out
}

/// Parses the rows of [`render_table`] back into `(species, cells)`;
/// lets callers check the text against the JSON.
pub fn parse_table(text: &str) -> Vec<(String, Vec<String>)> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('-'))
        .skip(1)
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            let name = parts.next()?.to_string();
            Some((name, parts.map(String::from).collect()))
        })
        .collect()
}

/// `iteration<TAB>mAP` per line.
pub fn render_curve(series: &CheckpointSeries) -> String {
    let mut s = String::new();
    for (it, m) in &series.points {
        let _ = writeln!(s, "{it}\t{m:.6}");
    }
    s
}

/// Per-class AP against iteration: header row of labels, then one row per
/// checkpoint.
pub fn render_class_curves(series: &CheckpointSeries) -> String {
    let mut s = String::from("iteration");
    for label in series.per_class.keys() {
        s.push('\t');
        s.push_str(label);
    }
    s.push('\n');
    for (it, _) in &series.points {
        let _ = write!(s, "{it}");
        for pts in series.per_class.values() {
            match pts.iter().find(|p| p.0 == *it) {
                Some((_, ap)) => {
                    let _ = write!(s, "\t{ap:.6}");
                }
                None => s.push_str("\t-"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use fishdet_core::eval::{collate_checkpoint_results, ClassAP, EvalConfig};

    fn report(aps: &[(&str, f64)]) -> EvalReport {
        let classes: Vec<ClassAP> = aps
            .iter()
            .map(|&(l, ap)| ClassAP {
                label: l.into(),
                ap,
                n_ground_truth: 1,
                n_detections: 1,
                points: vec![],
            })
            .collect();
        let map = aps.iter().map(|a| a.1).sum::<f64>() / aps.len() as f64;
        EvalReport {
            classes,
            map,
            config: EvalConfig::default(),
        }
    }

    #[test]
    fn single_model_table() {
        let doc = ReportDocument::new(vec![ModelReport {
            name: "zf".into(),
            report: report(&[("cod", 1.0), ("eel", 0.8235)]),
        }]);
        let t = render_table(&doc);
        let rows = parse_table(&t);
        assert_eq!(rows[0], ("cod".to_string(), vec!["1.000".to_string()]));
        assert_eq!(rows[1], ("eel".to_string(), vec!["0.824".to_string()]));
        assert_eq!(rows.last().unwrap().0, "mAP");
        assert_eq!(rows.last().unwrap().1, vec!["0.912".to_string()]);
        assert!(t.starts_with("# IoU >= 0.5, AP method all_points\n"));
    }

    #[test]
    fn model_columns() {
        let doc = ReportDocument::new(vec![
            ModelReport { name: "vgg16".into(), report: report(&[("cod", 1.0)]) },
            ModelReport { name: "cnn-m".into(), report: report(&[("cod", 0.5), ("eel", 0.25)]) },
            ModelReport { name: "zf".into(), report: report(&[("eel", 0.0)]) },
        ]);
        let t = render_table(&doc);
        assert!(t.lines().nth(1).unwrap().contains("AP on vgg16  AP on cnn-m  AP on zf"));
        let rows = parse_table(&t);
        assert_eq!(rows[0].1, vec!["1.000", "0.500", "-"]);
        assert_eq!(rows[2].1, vec!["1.000", "0.375", "0.000"]);
    }

    #[test]
    fn curve_text() {
        let s = collate_checkpoint_results(&[(500, report(&[("cod", 0.25)])), (1000, report(&[("cod", 0.5)]))]).unwrap();
        assert_eq!(render_curve(&s), "500\t0.250000\n1000\t0.500000\n");
        assert_eq!(render_class_curves(&s), "iteration\tcod\n500\t0.250000\n1000\t0.500000\n");
    }
}
