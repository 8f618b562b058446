//! Binary classification metrics. A slide is called positive when its score is `>= tau`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores and labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

/// Fraction of positives scoring at or above `tau`.
pub fn sensitivity(scores: &[f64], labels: &[bool], tau: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (hits, total) = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .fold((0usize, 0usize), |(h, t), (&s, _)| (h + (s >= tau) as usize, t + 1));
    if total == 0 {
        return Err(Error::NoPositives);
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of negatives scoring strictly below `tau`.
pub fn specificity(scores: &[f64], labels: &[bool], tau: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (hits, total) = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| !y)
        .fold((0usize, 0usize), |(h, t), (&s, _)| (h + (s < tau) as usize, t + 1));
    if total == 0 {
        return Err(Error::NoNegatives);
    }
    Ok(hits as f64 / total as f64)
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "AUC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney estimate of `P(score_pos > score_neg) + P(tie) / 2`, via midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Sum of doubled midranks of positives keeps everything in integers.
    let mut pos_rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled midrank = start + 1 + end
        let midrank2 = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        pos_rank_sum2 += midrank2 * pos_in_group;
        start = end;
    }
    let p = n_pos as u128;
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// ROC points ordered by increasing threshold, from `(-inf, 1, 1)` to `(+inf, 0, 0)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    let mut points = Vec::with_capacity(scores.len() + 2);
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    // counts of scores >= current threshold
    let (mut tp, mut fp) = (n_pos, n_neg);
    let mut start = 0;
    while start < order.len() {
        let t = scores[order[start]];
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        let mut end = start;
        while end < order.len() && scores[order[end]] == t {
            if labels[order[end]] {
                tp -= 1;
            } else {
                fp -= 1;
            }
            end += 1;
        }
        start = end;
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Writes ROC points as CSV with header `threshold,fpr,tpr`.
pub fn write_roc_csv(points: &[RocPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
