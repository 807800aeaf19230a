//! Classification metrics: accuracy, F1, ROC curve, and trapezoidal AUC.

use crate::error::{Error, Result};

/// Fraction of matching predictions.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// F1 for the positive (trust = 1) class; 0 when precision + recall is 0.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn check_lengths(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("empty prediction list"));
    }
    Ok(())
}

/// ROC points (FPR, TPR) from a descending threshold sweep over the unique
/// scores, starting at (0, 0) and ending at (1, 1). Tied scores move as one
/// group. Errors when only one class is present.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("scores and labels must align and be nonempty"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "ROC needs both classes present in the labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
    });
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under an ROC polyline by the trapezoid rule.
pub fn auc(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2)
        .map(|w| {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            (x1 - x0) * (y0 + y1) / 2.0
        })
        .sum()
}
