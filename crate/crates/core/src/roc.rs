//! ROC curves and AUC.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fp_rate, tp_rate)` from `(0, 0)` to `(1, 1)`, sorted by fp rate.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn check(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::EmptyInput("positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyInput("negative scores"));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    Ok(())
}

/// Sweeps the decision threshold over every distinct score, highest first.
/// Higher scores mean "more likely positive". Tied scores move both rates
/// at once, which credits ties with one half.
pub fn compute_roc(pos: &[f64], neg: &[f64]) -> Result<RocCurve> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    let auc: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    let mw = mann_whitney_auc(pos, neg)?;
    assert!(
        (auc - mw).abs() <= 1e-9,
        "trapezoid AUC {auc} disagrees with Mann-Whitney {mw}"
    );
    Ok(RocCurve { points, auc })
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half, from mid-ranks.
pub fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
