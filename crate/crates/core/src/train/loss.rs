use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{arg_err, dim_err, Result};
use crate::lti::SequenceBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    /// Over a softmax head; the model's last output step is the class
    /// distribution.
    CrossEntropy,
}

/// Mean over every element of `(pred − target)²`. Returns the loss and its
/// gradient w.r.t. `pred`.
pub fn mse_loss(pred: &SequenceBatch, target: &SequenceBatch) -> Result<(f64, SequenceBatch)> {
    if pred.shape() != target.shape() {
        return dim_err(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let count = pred.values().len();
    if count == 0 {
        return arg_err("loss over an empty batch");
    }
    let scale = 2.0 / count as f64;
    let mut sum = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let e = p - t;
            sum += e * e;
            scale * e
        })
        .collect();
    let (b, n, c) = pred.shape();
    Ok((sum / count as f64, SequenceBatch::new(b, n, c, grad)?))
}

fn check_classes(probs: &SequenceBatch, labels: &[usize]) -> Result<()> {
    if probs.batch() != labels.len() {
        return dim_err(format!(
            "{} predictions for {} labels",
            probs.batch(),
            labels.len()
        ));
    }
    if labels.is_empty() || probs.is_empty() {
        return arg_err("loss over an empty batch");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.channels()) {
        return arg_err(format!("class {bad} out of range for {} classes", probs.channels()));
    }
    Ok(())
}

/// Mean of `−ln p[label]` over the batch, reading the last step of `probs`.
///
/// Returns the loss and the gradient w.r.t. the softmax *pre-activation*,
/// `(p − onehot)/B`, placed at the last step (zeros elsewhere).
pub fn cross_entropy_loss(probs: &SequenceBatch, labels: &[usize]) -> Result<(f64, SequenceBatch)> {
    check_classes(probs, labels)?;
    let (b, n, k) = probs.shape();
    let mut grad = SequenceBatch::zeros(b, n, k);
    let mut sum = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.step(i, n - 1);
        sum -= p[label].max(f64::MIN_POSITIVE).ln();
        let g = grad.step_mut(i, n - 1);
        for (j, (gj, pj)) in g.iter_mut().zip(p).enumerate() {
            *gj = (pj - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((sum / b as f64, grad))
}

/// Dispatches on the target kind. The cross-entropy gradient is w.r.t. the
/// head pre-activation (see [`cross_entropy_loss`]).
pub fn evaluate_loss(loss: Loss, pred: &SequenceBatch, targets: &Targets) -> Result<(f64, SequenceBatch)> {
    match (loss, targets) {
        (Loss::Mse, Targets::Real(t)) => mse_loss(pred, t),
        (Loss::CrossEntropy, Targets::Classes(c)) => cross_entropy_loss(pred, c),
        (Loss::Mse, Targets::Classes(_)) => arg_err("mse needs real-valued targets"),
        (Loss::CrossEntropy, Targets::Real(_)) => arg_err("cross-entropy needs class targets"),
    }
}
