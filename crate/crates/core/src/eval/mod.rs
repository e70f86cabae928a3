//! Accuracy reports and regime comparisons.

mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Prediction;
use crate::question::{normalize_answer, Question, SemanticType};

pub use plot::plot_comparison;

/// Published GQA testdev accuracies of the two image baselines, kept in
/// reports as a fixed point of reference.
pub const REFERENCE_FOOTER: &str = "reference (GQA testdev): ATTN 0.48, CONCAT 0.435";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regime: String,
    pub seed: u64,
    pub overall_accuracy: f64,
    pub total: usize,
    /// Every semantic type, including those without questions.
    pub per_semantic_type: BTreeMap<SemanticType, TypeMetrics>,
    pub footer: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json(text, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn type_accuracy(&self, t: SemanticType) -> f64 {
        self.per_semantic_type.get(&t).map_or(0.0, |m| m.accuracy)
    }
}

/// Scores predictions against gold questions with exact matching after
/// lowercasing and trimming. Every gold question needs a prediction; extra
/// predictions are ignored.
pub fn accuracy(predictions: &[Prediction], gold: &[&Question], regime: &str, seed: u64) -> Result<MetricsReport> {
    let by_id: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.question_id.as_str(), p.answer.as_str()))
        .collect();
    let missing: Vec<String> = gold
        .iter()
        .filter(|q| !by_id.contains_key(q.question_id.as_str()))
        .map(|q| q.question_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let mut tally: BTreeMap<SemanticType, (usize, usize)> = SemanticType::ALL.iter().map(|&t| (t, (0, 0))).collect();
    for q in gold {
        let hit = normalize_answer(by_id[q.question_id.as_str()]) == normalize_answer(&q.answer);
        let entry = tally.entry(q.semantic_type).or_default();
        entry.0 += usize::from(hit);
        entry.1 += 1;
    }
    let correct: usize = tally.values().map(|c| c.0).sum();
    let total = gold.len();
    Ok(MetricsReport {
        regime: regime.to_string(),
        seed,
        overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        total,
        per_semantic_type: tally
            .into_iter()
            .map(|(t, (c, n))| {
                let accuracy = if n == 0 { 0.0 } else { c as f64 / n as f64 };
                (t, TypeMetrics { accuracy, count: n })
            })
            .collect(),
        footer: REFERENCE_FOOTER.to_string(),
    })
}

/// Mean of several reports of one regime (e.g. across seeds), weighting each
/// report equally.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::Empty("no reports to average".into()))?;
    let n = reports.len() as f64;
    let mut per_semantic_type = BTreeMap::new();
    for &t in &SemanticType::ALL {
        let accuracy = reports.iter().map(|r| r.type_accuracy(t)).sum::<f64>() / n;
        let count = reports.iter().map(|r| r.per_semantic_type.get(&t).map_or(0, |m| m.count)).sum();
        per_semantic_type.insert(t, TypeMetrics { accuracy, count });
    }
    Ok(MetricsReport {
        regime: first.regime.clone(),
        seed: first.seed,
        overall_accuracy: reports.iter().map(|r| r.overall_accuracy).sum::<f64>() / n,
        total: reports.iter().map(|r| r.total).sum(),
        per_semantic_type,
        footer: first.footer.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub regime: String,
    pub overall: f64,
    /// Accuracy per semantic type in [`SemanticType::ALL`] order.
    pub per_type: Vec<f64>,
    /// Overall accuracy minus that of the baseline (first given) report.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of reports, sorted by regime label. The first report
/// given is the baseline for the difference column.
pub fn compare_regimes(reports: &[MetricsReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config(format!("comparison needs at least 2 reports, got {}", reports.len())));
    }
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert(r.regime.as_str()) {
            return Err(Error::DuplicateRegime(r.regime.clone()));
        }
    }
    let base = reports[0].overall_accuracy;
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            regime: r.regime.clone(),
            overall: r.overall_accuracy,
            per_type: SemanticType::ALL.iter().map(|&t| r.type_accuracy(t)).collect(),
            difference: r.overall_accuracy - base,
        })
        .collect();
    rows.sort_by(|a, b| a.regime.cmp(&b.regime));
    Ok(Comparison {
        baseline: reports[0].regime.clone(),
        rows,
    })
}

impl Comparison {
    fn header() -> Vec<String> {
        let mut h = vec!["regime".to_string(), "overall".to_string()];
        h.extend(SemanticType::ALL.iter().map(|t| t.as_str().to_string()));
        h.push("difference".into());
        h
    }

    fn cells(row: &ComparisonRow) -> Vec<String> {
        let mut c = vec![row.regime.clone(), format!("{:.4}", row.overall)];
        c.extend(row.per_type.iter().map(|a| format!("{a:.4}")));
        c.push(format!("{:+.4}", row.difference));
        c
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header = Self::header();
        let body: Vec<Vec<String>> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| body.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in std::iter::once(&header).chain(&body) {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).expect("writing to a string");
        }
        writeln!(out, "difference: overall accuracy minus {}", self.baseline).expect("writing to a string");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header()).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(Self::cells(row)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}
