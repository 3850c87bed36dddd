//! Binary classification metrics: ROC AUC via Mann-Whitney ranks,
//! sensitivity/specificity at a threshold, ROC points and the biomarker
//! threshold comparator.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rr::Label;

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

fn require_both_classes(labels: &[Label]) -> Result<(usize, usize)> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        Err(Error::Metric("both classes must be present"))
    } else {
        Ok((pos, neg))
    }
}

fn check_lengths(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score"));
    }
    Ok(())
}

/// Area under the ROC curve: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half. Computed from
/// mid-ranks in `O(n log n)`; the statistic is accumulated in integers, so
/// it is exactly the pairwise count divided by `n_pos * n_neg`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of the positives; mid-ranks are half-integers
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u64;
        let pos_in_tie = order[i..=j]
            .iter()
            .filter(|&&k| labels[k].is_positive())
            .count() as u64;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * n_neg as u64) as f64)
}

/// `(sensitivity, specificity)` predicting positive when `score >= threshold`.
pub fn sens_spec(scores: &[f64], labels: &[Label], threshold: f64) -> Result<(f64, f64)> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes(labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_positive()) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / n_pos as f64, tn as f64 / n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC operating points for every distinct score, from the strictest
/// threshold (`+inf`, nothing predicted positive) to the loosest.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = alloc::vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Threshold maximizing `sensitivity + specificity - 1`, and that maximum.
pub fn youden_point(scores: &[f64], labels: &[Label]) -> Result<(f64, f64)> {
    let curve = roc_curve(scores, labels)?;
    let best = curve
        .iter()
        .skip(1)
        .map(|p| (p.threshold, p.tpr - p.fpr))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TriageMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
}

/// Default biomarker decision level.
pub const CTNI_THRESHOLD: f64 = 0.6;

/// Thresholded biomarker comparator: positive when `value >= threshold`;
/// AUC uses the raw values.
pub fn ctni_triage(values: &[f64], labels: &[Label], threshold: f64) -> Result<TriageMetrics> {
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Metric("biomarker values must be non-negative"));
    }
    let (sensitivity, specificity) = sens_spec(values, labels, threshold)?;
    Ok(TriageMetrics {
        sensitivity,
        specificity,
        auc: roc_auc(values, labels)?,
    })
}
