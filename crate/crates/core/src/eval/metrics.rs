use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[bool], labels: &[bool]) -> Self {
        let mut m = Self::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
                (false, true) => m.fn_ += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Macro average over both classes, like `recall` and `f1`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Index 0 is the negative class.
    pub per_class: [ClassMetrics; 2],
    pub confusion: ConfusionMatrix,
    /// Ratios that were 0/0 and reported as 0.
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} is 0/0, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: usize, fp: usize, fn_: usize, class: u8, warnings: &mut Vec<String>) -> ClassMetrics {
    let precision = ratio(tp, tp + fp, &format!("class {class} precision"), warnings);
    let recall = ratio(tp, tp + fn_, &format!("class {class} recall"), warnings);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Per-class and macro-averaged metrics of hard 0/1 predictions.
pub fn compute_metrics(preds: &[bool], labels: &[bool]) -> Result<MetricReport, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let m = ConfusionMatrix::from_predictions(preds, labels);
    let mut warnings = Vec::new();
    let negative = class_metrics(m.tn, m.fn_, m.fp, 0, &mut warnings);
    let positive = class_metrics(m.tp, m.fp, m.fn_, 1, &mut warnings);
    Ok(MetricReport {
        precision: (negative.precision + positive.precision) / 2.0,
        recall: (negative.recall + positive.recall) / 2.0,
        f1: (negative.f1 + positive.f1) / 2.0,
        accuracy: (m.tp + m.tn) as f64 / m.total() as f64,
        per_class: [negative, positive],
        confusion: m,
        warnings,
    })
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "support")?;
        for (i, c) in self.per_class.iter().enumerate() {
            writeln!(
                f,
                "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                format!("class {i}"),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        writeln!(
            f,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            "macro",
            self.precision,
            self.recall,
            self.f1,
            self.confusion.total()
        )?;
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        let m = &self.confusion;
        writeln!(f, "confusion tp={} fp={} tn={} fn={}", m.tp, m.fp, m.tn, m.fn_)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
