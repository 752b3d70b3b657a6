//! Evaluation metrics, all oriented so that larger is better.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::student::{argmax, loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Accuracy,
    MacroF1,
    /// Negated mean cross-entropy.
    #[serde(rename = "neg_loss")]
    NegMeanLoss,
}

impl MetricKind {
    pub fn needs_probabilities(self) -> bool {
        matches!(self, MetricKind::NegMeanLoss)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MacroF1 => "macro_f1",
            MetricKind::NegMeanLoss => "neg_loss",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "macro_f1" => Ok(MetricKind::MacroF1),
            "neg_loss" => Ok(MetricKind::NegMeanLoss),
            other => Err(Error::validation(format!(
                "unknown metric {other:?} (expected accuracy, macro_f1 or neg_loss)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Predictions<'a> {
    Labels(&'a [usize]),
    Probabilities(&'a [Vec<f64>]),
}

impl Predictions<'_> {
    fn len(&self) -> usize {
        match self {
            Predictions::Labels(l) => l.len(),
            Predictions::Probabilities(p) => p.len(),
        }
    }

    fn labels(&self) -> Vec<usize> {
        match self {
            Predictions::Labels(l) => l.to_vec(),
            Predictions::Probabilities(p) => p.iter().map(|v| argmax(v)).collect(),
        }
    }
}

/// Scores `predictions` against `labels`, inferring the class count from
/// the largest index seen (or the probability vector width).
pub fn evaluate(kind: MetricKind, predictions: Predictions<'_>, labels: &[usize]) -> Result<f64> {
    let classes = match predictions {
        Predictions::Probabilities(p) => p.first().map_or(0, Vec::len),
        Predictions::Labels(l) => l.iter().chain(labels).max().map_or(0, |m| m + 1),
    };
    evaluate_with_classes(kind, predictions, labels, classes)
}

pub fn evaluate_with_classes(
    kind: MetricKind,
    predictions: Predictions<'_>,
    labels: &[usize],
    class_count: usize,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::validation("cannot evaluate an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    match kind {
        MetricKind::Accuracy => {
            let correct = predictions
                .labels()
                .iter()
                .zip(labels)
                .filter(|(p, y)| p == y)
                .count();
            Ok(correct as f64 / labels.len() as f64)
        }
        MetricKind::MacroF1 => Ok(macro_f1(&predictions.labels(), labels, class_count)),
        MetricKind::NegMeanLoss => {
            let Predictions::Probabilities(probs) = predictions else {
                return Err(Error::validation("neg_loss requires probability vectors"));
            };
            let mut total = 0.0;
            for (p, &y) in probs.iter().zip(labels) {
                if y >= p.len() {
                    return Err(Error::validation(format!("label {y} out of range")));
                }
                total += loss(p, y);
            }
            Ok(-total / labels.len() as f64)
        }
    }
}

fn macro_f1(preds: &[usize], labels: &[usize], class_count: usize) -> f64 {
    let classes = class_count.max(preds.iter().chain(labels).max().map_or(0, |m| m + 1));
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[y] += 1;
        }
    }
    let sum: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fne[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    sum / classes as f64
}
