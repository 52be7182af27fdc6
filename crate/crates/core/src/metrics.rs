//! Window-level precision / recall / F1 for both detection tasks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Anomaly,
    Poa,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Anomaly => "anomaly",
            Task::Poa => "poa",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    /// Precision; an empty denominator scores 1 only when there was also
    /// nothing to find.
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => (self.fn_ == 0) as u8 as f64,
            d => self.tp as f64 / d as f64,
        }
    }

    /// Recall; an empty denominator scores 1 only when nothing was flagged.
    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => (self.fp == 0) as u8 as f64,
            d => self.tp as f64 / d as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub threshold: f64,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Counts> {
    if probs.len() != labels.len() {
        return Err(PadError::Input(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut c = Counts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn evaluate(task: Task, probs: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(PadError::Input("evaluation needs at least one window".into()));
    }
    let counts = confusion(probs, labels, threshold)?;
    Ok(EvalReport {
        task,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
        threshold,
        probabilities: probs.to_vec(),
        labels: labels.to_vec(),
    })
}

/// Summary without the per-window arrays, for logs and metric files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub threshold: f64,
    pub windows: usize,
}

impl EvalReport {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            task: self.task,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            counts: self.counts,
            threshold: self.threshold,
            windows: self.labels.len(),
        }
    }
}

/// Aligned P / R / F1 table, values in percent.
pub fn render_table(title: &str, reports: &[&EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}", "task", "P", "R", "F1", "TP", "FP", "TN", "FN");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6} {:>6} {:>6}",
            r.task.name(),
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1,
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_,
        );
    }
    s
}
