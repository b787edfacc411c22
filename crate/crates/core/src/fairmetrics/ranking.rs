//! Threshold-free ranking metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fairmetrics::confusion::Undefined;

fn check(labels: &[u8], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Validation(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    Ok(())
}

/// `(score, positives, negatives)` per distinct score, ascending.
fn score_groups(labels: &[u8], scores: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in idx {
        let (pos, neg) = if labels[i] == 1 { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((scores[i], pos, neg)),
        }
    }
    groups
}

/// Area under the ROC curve in its Mann-Whitney form:
/// `(concordant + 0.5 * ties) / (P * N)` over all positive/negative pairs.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<std::result::Result<f64, Undefined>> {
    check(labels, scores)?;
    let p = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Ok(Err(Undefined {
            metric: "roc_auc",
            denominator: if p == 0 { "positives" } else { "negatives" },
        }));
    }
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u64 = 0;
    for (_, gp, gn) in score_groups(labels, scores) {
        twice_u += 2 * gp as u128 * neg_below as u128 + gp as u128 * gn as u128;
        neg_below += gn;
    }
    Ok(Ok(twice_u as f64 / 2.0 / (p as f64 * n as f64)))
}

/// Average precision `sum_k (R_k - R_{k-1}) * P_k` over descending score
/// thresholds. Tied scores form a single threshold, so the result does not
/// depend on input order.
pub fn average_precision(labels: &[u8], scores: &[f64]) -> Result<std::result::Result<f64, Undefined>> {
    check(labels, scores)?;
    let p = labels.iter().filter(|&&y| y == 1).count() as u64;
    if p == 0 {
        return Ok(Err(Undefined {
            metric: "average_precision",
            denominator: "positives",
        }));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (_, gp, gn) in score_groups(labels, scores).into_iter().rev() {
        tp += gp;
        fp += gn;
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(Ok(ap))
}
