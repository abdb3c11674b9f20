use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification metrics for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub accuracy_pct: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy, when logits were available.
    pub loss: Option<f64>,
}

impl MetricsReport {
    /// Builds the report from predicted and true labels. A class with no
    /// predictions has precision 0; F1 is 0 when precision + recall is 0.
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::dim("metrics", &[predicted.len()], &[truth.len()]));
        }
        if predicted.is_empty() {
            return Err(Error::InvalidInput("metrics over an empty split".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            for l in [p, t] {
                if l >= classes {
                    return Err(Error::Label { label: l, classes });
                }
            }
            confusion[t][p] += 1;
        }
        let total = truth.len();
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut precision = Vec::with_capacity(classes);
        let mut recall = Vec::with_capacity(classes);
        let mut f1 = Vec::with_capacity(classes);
        for c in 0..classes {
            let predicted_c: usize = confusion.iter().map(|r| r[c]).sum();
            let p = ratio(confusion[c][c], predicted_c);
            let r = ratio(confusion[c][c], support[c]);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let accuracy = correct as f64 / total as f64;
        Ok(MetricsReport {
            total,
            correct,
            accuracy,
            accuracy_pct: 100.0 * accuracy,
            macro_f1: f1.iter().sum::<f64>() / classes as f64,
            precision,
            recall,
            f1,
            support,
            confusion,
            loss: None,
        })
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of one row of logits against `label`.
pub fn cross_entropy(row: &[f64], label: usize) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    lse - row[label]
}
