use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::lti::SequenceBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// The training loss, evaluated on the set.
    Loss,
    Nrmse,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::Nrmse => "nrmse",
            Metric::Accuracy => "accuracy",
        }
    }
}

/// Root-mean-square error divided by the root-mean-square of the targets.
pub fn nrmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return dim_err(format!("{} predictions for {} targets", pred.len(), target.len()));
    }
    if target.is_empty() {
        return arg_err("nrmse of an empty series");
    }
    let n = target.len() as f64;
    let rms = (target.iter().map(|t| t * t).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return arg_err("nrmse is undefined for identically zero targets");
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    Ok(mse.sqrt() / rms)
}

/// Fraction of examples whose last-step argmax equals the label.
pub fn accuracy(probs: &SequenceBatch, labels: &[usize]) -> Result<f64> {
    if probs.batch() != labels.len() || labels.is_empty() || probs.is_empty() {
        return dim_err("accuracy needs one non-empty prediction per label");
    }
    let n = probs.len();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = probs.step(i, n - 1);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            best == label
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
