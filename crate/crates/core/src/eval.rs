//! Confusion matrices, macro-averaged metrics, improvement over a baseline,
//! and the combined report.
//!
//! Hateful is the positive class. A precision or recall whose denominator
//! is zero is reported as 0 and listed in `zero_denominators`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::Prediction;
use crate::corpus::Label;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no gold label for tweet {0}")]
    MissingGold(String),
    #[error("tweet {0} has more than one prediction")]
    DuplicatePrediction(String),
    #[error("no scored predictions (all {abstains} abstained)")]
    NoPredictions { abstains: usize },
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn record(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Hateful, Label::Hateful) => self.tp += 1,
            (Label::Hateful, Label::NotHateful) => self.fp += 1,
            (Label::NotHateful, Label::Hateful) => self.fn_ += 1,
            (Label::NotHateful, Label::NotHateful) => self.tn += 1,
        }
    }

    /// The same counts with NotHateful as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix::new(self.tp, self.fn_, self.fp, self.tn)
    }
}

/// Tallies predictions against gold labels; abstentions are skipped and
/// counted.
pub fn confusion(
    predictions: &[Prediction],
    gold: &HashMap<String, Label>,
) -> Result<(ConfusionMatrix, usize), EvalError> {
    let mut cm = ConfusionMatrix::default();
    let mut abstains = 0;
    let mut seen = HashSet::new();
    for p in predictions {
        let g = gold
            .get(&p.tweet_id)
            .ok_or_else(|| EvalError::MissingGold(p.tweet_id.clone()))?;
        if !seen.insert(p.tweet_id.as_str()) {
            return Err(EvalError::DuplicatePrediction(p.tweet_id.clone()));
        }
        match p.label {
            Some(label) => cm.record(label, *g),
            None => abstains += 1,
        }
    }
    if cm.total() == 0 {
        return Err(EvalError::NoPredictions { abstains });
    }
    Ok((cm, abstains))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hateful: ClassScores,
    pub not_hateful: ClassScores,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub abstains: usize,
    pub zero_denominators: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_scores(tp: u64, fp: u64, fn_: u64, class: &str, flags: &mut Vec<String>) -> ClassScores {
    let precision = ratio(tp, tp + fp, &format!("{class}.precision"), flags);
    let recall = ratio(tp, tp + fn_, &format!("{class}.recall"), flags);
    let f1 = if precision + recall == 0.0 {
        flags.push(format!("{class}.f1"));
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let mut flags = Vec::new();
    let hateful = class_scores(cm.tp, cm.fp, cm.fn_, "hateful", &mut flags);
    let not_hateful = class_scores(cm.tn, cm.fn_, cm.fp, "not_hateful", &mut flags);
    let accuracy = ratio(cm.tn + cm.tp, cm.total(), "accuracy", &mut flags);
    MetricsReport {
        macro_precision: (hateful.precision + not_hateful.precision) / 2.0,
        macro_recall: (hateful.recall + not_hateful.recall) / 2.0,
        macro_f1: (hateful.f1 + not_hateful.f1) / 2.0,
        hateful,
        not_hateful,
        accuracy,
        abstains: 0,
        zero_denominators: flags,
    }
}

/// Rounds to 2 decimals after first snapping away binary noise, so that a
/// value like 8.7499999999 displays as 8.75.
pub fn round2(x: f64) -> f64 {
    ((x * 1e8).round() / 1e6).round() / 100.0
}

/// Relative improvement in percent, rounded to 2 decimals.
pub fn improvement(model_f1: f64, baseline_f1: f64) -> Result<f64, EvalError> {
    if baseline_f1 <= 0.0 || baseline_f1.is_nan() {
        return Err(EvalError::NonPositiveBaseline(baseline_f1));
    }
    Ok(round2((model_f1 - baseline_f1) / baseline_f1 * 100.0))
}

/// One evaluated run fed into [`report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub matrix: ConfusionMatrix,
    pub abstains: usize,
    pub baseline_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub abstains: usize,
    pub zero_denominators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub dataset: String,
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub dataset: String,
    /// Macro F1 at table precision (2 decimals).
    pub model_f1: f64,
    pub baseline_f1: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: Vec<MetricsRow>,
    pub confusion: Vec<ConfusionRow>,
    pub improvement: Vec<ImprovementRow>,
}

/// Builds the report with rows sorted by dataset name. Runs without a
/// baseline, or with a non-positive one, get no improvement row.
pub fn report(runs: &[RunResult]) -> Report {
    let mut runs: Vec<&RunResult> = runs.iter().collect();
    runs.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = Report {
        metrics: Vec::new(),
        confusion: Vec::new(),
        improvement: Vec::new(),
    };
    for run in runs {
        let m = macro_metrics(&run.matrix);
        out.metrics.push(MetricsRow {
            dataset: run.name.clone(),
            precision: m.macro_precision,
            recall: m.macro_recall,
            f1: m.macro_f1,
            accuracy: m.accuracy,
            abstains: run.abstains,
            zero_denominators: m.zero_denominators,
        });
        out.confusion.push(ConfusionRow {
            dataset: run.name.clone(),
            matrix: run.matrix,
        });
        if let Some(base) = run.baseline_f1 {
            let model_f1 = round2(m.macro_f1);
            if let Ok(imp) = improvement(model_f1, base) {
                out.improvement.push(ImprovementRow {
                    dataset: run.name.clone(),
                    model_f1,
                    baseline_f1: base,
                    improvement: imp,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    Text,
    Markdown,
}

fn table(style: TableStyle, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        match style {
            TableStyle::Text => padded.join("  ").trim_end().to_string(),
            TableStyle::Markdown => format!("| {} |", padded.join(" | ")),
        }
    };
    let mut out = String::new();
    out.push_str(&line(header.iter().map(|h| h.to_string()).collect()));
    out.push('\n');
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, w)| match style {
            TableStyle::Text => "-".repeat(*w),
            TableStyle::Markdown if i == 0 => "-".repeat(*w),
            TableStyle::Markdown => format!("{}:", "-".repeat(w - 1)),
        })
        .collect();
    out.push_str(&match style {
        TableStyle::Text => rule.join("  "),
        TableStyle::Markdown => format!("| {} |", rule.join(" | ")),
    });
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.clone()));
        out.push('\n');
    }
    out
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn render(&self, style: TableStyle) -> String {
        let heading = |title: &str| match style {
            TableStyle::Text => format!("{title}\n\n"),
            TableStyle::Markdown => format!("## {title}\n\n"),
        };
        let mut out = heading("Metrics");
        let rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|m| {
                vec![
                    m.dataset.clone(),
                    format!("{:.2}", m.precision),
                    format!("{:.2}", m.recall),
                    format!("{:.2}", m.f1),
                    format!("{:.2}", m.accuracy),
                    m.abstains.to_string(),
                ]
            })
            .collect();
        out.push_str(&table(
            style,
            &["Dataset", "Precision", "Recall", "F1", "Accuracy", "Abstains"],
            &rows,
        ));
        let flagged: BTreeMap<&str, &Vec<String>> = self
            .metrics
            .iter()
            .filter(|m| !m.zero_denominators.is_empty())
            .map(|m| (m.dataset.as_str(), &m.zero_denominators))
            .collect();
        for (name, flags) in flagged {
            let _ = writeln!(out, "\nzero denominators in {name}: {}", flags.join(", "));
        }
        out.push('\n');
        out.push_str(&heading("Confusion matrices"));
        let rows: Vec<Vec<String>> = self
            .confusion
            .iter()
            .map(|c| {
                vec![
                    c.dataset.clone(),
                    c.matrix.tn.to_string(),
                    c.matrix.fp.to_string(),
                    c.matrix.fn_.to_string(),
                    c.matrix.tp.to_string(),
                ]
            })
            .collect();
        out.push_str(&table(style, &["Dataset", "TN", "FP", "FN", "TP"], &rows));
        out.push('\n');
        out.push_str(&heading("Improvement over baseline"));
        let rows: Vec<Vec<String>> = self
            .improvement
            .iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    format!("{:.2}", r.model_f1),
                    format!("{:.2}", r.baseline_f1),
                    format!("{:.2}", r.improvement),
                ]
            })
            .collect();
        out.push_str(&table(
            style,
            &["Dataset", "Model F1", "Baseline F1", "Improvement (%)"],
            &rows,
        ));
        out
    }
}
