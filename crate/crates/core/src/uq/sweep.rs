//! Threshold sweep: cases whose confidence falls below a threshold are
//! handed to an oracle (their prediction replaced by the true label), and the
//! resulting macro-F1 is traced over thresholds in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{accuracy, macro_f1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub replaced: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best_threshold: f64,
    pub best_macro_f1: f64,
    /// Macro-F1 with no replacement.
    pub base_macro_f1: f64,
    /// Mean macro-F1 over all thresholds.
    pub mean_macro_f1: f64,
    pub mean_accuracy: f64,
}

impl SweepResult {
    /// Whitespace-aligned table, one row per threshold.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>9}  {:>10}  {:>8}  {:>8}\n", "threshold", "n_replaced", "accuracy", "macro_f1");
        for r in &self.rows {
            out.push_str(&format!("{:>9.2}  {:>10}  {:>8.4}  {:>8.4}\n", r.threshold, r.replaced, r.accuracy, r.macro_f1));
        }
        out.push_str(&format!(
            "# best_threshold {:.2} best_macro_f1 {:.4} base_macro_f1 {:.4} mean_macro_f1 {:.4} mean_accuracy {:.4}\n",
            self.best_threshold, self.best_macro_f1, self.base_macro_f1, self.mean_macro_f1, self.mean_accuracy
        ));
        out
    }
}

/// Thresholds `i / n` for `n = round(1 / step)`.
pub fn sweep_thresholds(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("sweep step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

pub fn uq_sweep(predictions: &[usize], confidences: &[f64], labels: &[usize], class_count: usize, step: f64) -> Result<SweepResult> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if confidences.len() != labels.len() {
        return Err(Error::LengthMismatch { left: confidences.len(), right: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::NumericDomain(format!("confidence {c} outside [0, 1]")));
    }
    let mut rows = Vec::new();
    for threshold in sweep_thresholds(step)? {
        let mut replaced = 0;
        let adjusted: Vec<usize> = predictions
            .iter()
            .zip(confidences)
            .zip(labels)
            .map(|((&p, &c), &y)| {
                if c < threshold {
                    replaced += 1;
                    y
                } else {
                    p
                }
            })
            .collect();
        rows.push(SweepRow {
            threshold,
            replaced,
            macro_f1: macro_f1(&adjusted, labels, class_count)?,
            accuracy: accuracy(&adjusted, labels)?,
        });
    }
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.macro_f1 > best.macro_f1 {
            best = r;
        }
    }
    let count = rows.len() as f64;
    Ok(SweepResult {
        best_threshold: best.threshold,
        best_macro_f1: best.macro_f1,
        base_macro_f1: macro_f1(predictions, labels, class_count)?,
        mean_macro_f1: rows.iter().map(|r| r.macro_f1).sum::<f64>() / count,
        mean_accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / count,
        rows,
    })
}
