//! Loss kernels. Each returns the scalar loss together with its gradient
//! with respect to the prediction, so the tape only has to scale it.

use crate::error::{Error, Result};

use super::kernels::sigmoid;

fn normalizer(weights: Option<&[f64]>, len: usize) -> Result<f64> {
    match weights {
        None => Ok(len as f64),
        Some(w) => {
            if w.len() != len {
                return Err(Error::Shape(format!("{} weights for {len} loss terms", w.len())));
            }
            if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Domain(format!("loss weight {bad} is not a finite non-negative value")));
            }
            Ok(w.iter().sum())
        }
    }
}

/// Weighted mean cross-entropy of row-wise softmax over `logits` (rows×classes).
pub(crate) fn softmax_cross_entropy(
    logits: &[f64],
    classes: usize,
    targets: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let rows = targets.len();
    if classes == 0 || logits.len() != rows * classes {
        return Err(Error::Shape(format!(
            "{} logits cannot form {rows} rows of {classes} classes",
            logits.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Domain(format!("class index {bad} out of range for {classes} classes")));
    }
    let total = normalizer(weights, rows)?;
    let mut grad = vec![0.0; logits.len()];
    if total == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (r, (&target, g)) in targets.iter().zip(grad.chunks_mut(classes)).enumerate() {
        let w = weights.map_or(1.0, |w| w[r]) / total;
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += w * (log_norm - z[target]);
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (z[c] - log_norm).exp();
            *gv = w * (p - if c == target { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}

/// Weighted mean binary cross-entropy on logits, in the overflow-free form
/// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub(crate) fn bce_with_logits(logits: &[f64], targets: &[f64], weights: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::Domain(format!("binary target {bad} outside [0, 1]")));
    }
    let total = normalizer(weights, logits.len())?;
    let mut grad = vec![0.0; logits.len()];
    if total == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (i, ((&z, &y), g)) in logits.iter().zip(targets).zip(grad.iter_mut()).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]) / total;
        if w == 0.0 {
            continue;
        }
        loss += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        *g = w * (sigmoid(z) - y);
    }
    Ok((loss, grad))
}

/// Mean smooth-L1 (Huber with unit transition) over all elements.
pub(crate) fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d.abs() < 1.0 {
                loss += 0.5 * d * d;
                d / n
            } else {
                loss += d.abs() - 0.5;
                d.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}
