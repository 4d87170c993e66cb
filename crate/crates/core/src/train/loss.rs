use crate::diffmath::{log_sum_exp, softmax_slice};
use crate::error::{Error, Result};

/// `−ln probs[label]` for an explicit probability vector.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::Contract(format!("label {label} outside {} classes", probs.len())))?;
    Ok(-p.ln())
}

/// Cross-entropy evaluated from logits as `lse(logits) − logits[label]`,
/// which stays finite when the softmax underflows. Returns the loss and its
/// gradient with respect to the logits, `softmax(logits) − onehot(label)`.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax_slice(logits);
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}
