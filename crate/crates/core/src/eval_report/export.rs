use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{ClassMetrics, SpanF1};
use crate::error::{Error, Result};

/// Marker written for undefined metric values.
pub const UNDEFINED: &str = "NA";

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceRow {
    pub sentence: usize,
    pub position: usize,
    pub token: String,
    pub w_elem: f64,
    pub w_hat: f64,
    pub alpha: f64,
}

pub fn format_relevance_tsv(rows: &[RelevanceRow]) -> String {
    let mut out = String::from("sentence_id\tposition\ttoken\tw_elem\tw_hat\talpha\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.sentence, r.position, r.token, r.w_elem, r.w_hat, r.alpha
        );
    }
    out
}

pub fn write_relevance_tsv(path: &Path, rows: &[RelevanceRow]) -> Result<()> {
    std::fs::write(path, format_relevance_tsv(rows)).map_err(|e| Error::io(path, e))
}

/// Rows of `(metric, value, class)`; `class` is empty for overall metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<(String, Option<f64>, String)>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, value: Option<f64>, class: &str) {
        self.rows.push((metric.to_string(), value, class.to_string()));
    }

    pub fn get(&self, metric: &str, class: &str) -> Option<Option<f64>> {
        self.rows
            .iter()
            .find(|(m, _, c)| m == metric && c == class)
            .map(|r| r.1)
    }

    pub fn add_span_f1(&mut self, f: &SpanF1) {
        self.push("precision", Some(f.overall.precision), "");
        self.push("recall", Some(f.overall.recall), "");
        self.push("f1", Some(f.overall.f1), "");
        for (t, p) in &f.per_type {
            self.push("f1", Some(p.f1), t);
        }
    }

    /// Strong/weak rows; the per-class score is token accuracy, plus
    /// non-`O` tag F1 when the scheme has an outside tag.
    pub fn add_classes(&mut self, m: &ClassMetrics, threshold: Option<f64>) {
        if let Some(t) = threshold {
            self.push("relevance_threshold", Some(t), "");
        }
        for (name, c) in [("strong", m.strong), ("weak", m.weak)] {
            self.push("tokens", c.map(|c| c.tokens as f64), name);
            self.push("token_accuracy", c.map(|c| c.accuracy), name);
            if let Some(f) = c.and_then(|c| c.tag_f1) {
                self.push("tag_f1", Some(f), name);
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,class\n");
        for (m, v, c) in &self.rows {
            let v = v.map_or(UNDEFINED.to_string(), |x| x.to_string());
            let _ = writeln!(out, "{m},{v},{c}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
