use std::fmt::Write;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::labels::Category;

use super::IouKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ApEntry {
    pub category: Category,
    pub threshold_index: usize,
    pub kind: IouKind,
    /// 0–100, `None` where undefined (no ground truth and no predictions).
    pub ap: Option<f64>,
}

/// AP values per (category, threshold, kind) and their means. Means skip
/// undefined entries: first over categories at each threshold, then over
/// thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub thresholds: Vec<f64>,
    pub kinds: Vec<IouKind>,
    pub categories: Vec<Category>,
    pub entries: Vec<ApEntry>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ApReport {
    pub fn new(thresholds: Vec<f64>, kinds: Vec<IouKind>, categories: Vec<Category>, entries: Vec<ApEntry>) -> Self {
        Self {
            thresholds,
            kinds,
            categories,
            entries,
        }
    }

    pub fn ap(&self, kind: IouKind, category: Category, threshold_index: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.kind == kind && e.category == category && e.threshold_index == threshold_index)
            .and_then(|e| e.ap)
    }

    /// Mean over categories at one threshold.
    pub fn map_at(&self, kind: IouKind, threshold_index: usize) -> Option<f64> {
        mean(
            self.entries
                .iter()
                .filter(|e| e.kind == kind && e.threshold_index == threshold_index)
                .filter_map(|e| e.ap),
        )
    }

    /// Mean of [`map_at`](Self::map_at) over thresholds.
    pub fn map(&self, kind: IouKind) -> Option<f64> {
        mean((0..self.thresholds.len()).filter_map(|t| self.map_at(kind, t)))
    }

    /// Index of `threshold` in the report, compared at 1e-9.
    pub fn threshold_index(&self, threshold: f64) -> Option<usize> {
        self.thresholds.iter().position(|&t| (t - threshold).abs() < 1e-9)
    }

    /// `{kind: {threshold: mAP}, summary: {kind: mAP}, per_category: …}`;
    /// undefined values are `null`.
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        let mut summary = Map::new();
        let mut per_category = Map::new();
        for &kind in &self.kinds {
            let mut by_t = Map::new();
            for (i, t) in self.thresholds.iter().enumerate() {
                by_t.insert(format!("{t:.2}"), json!(self.map_at(kind, i)));
            }
            root.insert(kind.name().into(), Value::Object(by_t));
            summary.insert(kind.name().into(), json!(self.map(kind)));
            let mut cats = Map::new();
            for &c in &self.categories {
                let aps: Vec<Value> = (0..self.thresholds.len()).map(|i| json!(self.ap(kind, c, i))).collect();
                cats.insert(c.name().into(), Value::Array(aps));
            }
            per_category.insert(kind.name().into(), Value::Object(cats));
        }
        root.insert("summary".into(), Value::Object(summary));
        root.insert("per_category".into(), Value::Object(per_category));
        root.insert("thresholds".into(), json!(self.thresholds));
        Value::Object(root)
    }
}

/// Fixed-width table: a header of thresholds, one row of mAP per kind, then
/// one summary line per kind.
pub fn render_table(report: &ApReport) -> Result<String> {
    if report.kinds.is_empty() || report.thresholds.is_empty() || report.entries.is_empty() {
        return Err(Error::Validation("cannot render an empty report".into()));
    }
    let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>7}", "-"), |v| format!("{v:>7.2}"));
    let mut out = String::new();
    write!(out, "{:<6}", "IoU").unwrap();
    for t in &report.thresholds {
        write!(out, "{t:>7.2}").unwrap();
    }
    out.push('\n');
    for &kind in &report.kinds {
        write!(out, "{:<6}", kind.name()).unwrap();
        for i in 0..report.thresholds.len() {
            out.push_str(&cell(report.map_at(kind, i)));
        }
        out.push('\n');
    }
    for &kind in &report.kinds {
        let v = report.map(kind).map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        writeln!(out, "{kind} mAP: {v}").unwrap();
    }
    Ok(out)
}
