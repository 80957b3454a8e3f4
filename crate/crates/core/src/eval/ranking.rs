use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract("spearman needs two aligned series of length ≥ 2"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::contract("spearman is undefined for a constant series"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

fn require_both(pos: usize, neg: usize) -> Result<()> {
    if pos == 0 || neg == 0 {
        return Err(Error::contract("both classes must be present"));
    }
    Ok(())
}

/// Operating point for "positive when score ≥ threshold".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative (TP, FP) counts at every distinct score, highest threshold first.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0, 0);
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// Mann–Whitney AUC, `P(s₊ > s₋) + ½P(s₊ = s₋)`, from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    require_both(pos, neg)?;
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((r_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auc: f64,
    /// Starts at `(0, 0)` with an infinite threshold, then one point per distinct score.
    pub points: Vec<RocPoint>,
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let auc = auc(scores, labels)?;
    let (pos, neg) = check_binary(scores, labels)?;
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    points.extend(sweep(scores, labels).into_iter().map(|(t, tp, fp)| RocPoint {
        threshold: t,
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
    }));
    Ok(RocCurve { auc, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub auc: f64,
    /// Starts at recall 0, precision 1, then one point per distinct score.
    pub points: Vec<PrPoint>,
}

/// Trapezoidal area under precision against recall.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    let (pos, _) = check_binary(scores, labels)?;
    if pos == 0 {
        return Err(Error::contract("PR-AUC needs at least one positive"));
    }
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    points.extend(sweep(scores, labels).into_iter().map(|(t, tp, fp)| PrPoint {
        threshold: t,
        recall: tp as f64 / pos as f64,
        precision: tp as f64 / (tp + fp) as f64,
    }));
    let auc = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0)
        .sum();
    Ok(PrCurve { auc, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Youden {
    pub threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Cut-point maximising `sens + spec − 1` over distinct scores; ties go to the lower threshold.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<Youden> {
    let (pos, neg) = check_binary(scores, labels)?;
    require_both(pos, neg)?;
    let mut best: Option<Youden> = None;
    for (t, tp, fp) in sweep(scores, labels) {
        let sens = tp as f64 / pos as f64;
        let spec = 1.0 - fp as f64 / neg as f64;
        let j = sens + spec - 1.0;
        // Thresholds arrive in decreasing order, so `>=` keeps the lowest among ties.
        if best.is_none_or(|b| j >= b.j) {
            best = Some(Youden {
                threshold: t,
                j,
                sensitivity: sens,
                specificity: spec,
            });
        }
    }
    Ok(best.expect("at least one score"))
}

/// Placement values `(V10 per positive, V01 per negative)`.
fn placements(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    // Share of `sorted` strictly below `x`, plus half the ties.
    let place = |sorted: &[f64], x: f64| {
        let below = sorted.partition_point(|&v| v < x);
        let upto = sorted.partition_point(|&v| v <= x);
        (below as f64 + 0.5 * (upto - below) as f64) / sorted.len() as f64
    };
    neg.sort_by(f64::total_cmp);
    pos.sort_by(f64::total_cmp);
    let v10 = pos.iter().map(|&x| place(&neg, x)).collect();
    let v01 = neg.iter().map(|&y| 1.0 - place(&pos, y)).collect();
    (v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong variance of a single AUC.
pub fn delong_variance(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    require_both(pos, neg)?;
    let (v10, v01) = placements(scores, labels);
    Ok(covariance(&v10, &v10) / pos as f64 + covariance(&v01, &v01) / neg as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLong {
    pub auc_a: f64,
    pub auc_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub covariance: f64,
    pub z: f64,
    /// Two-sided, normal approximation.
    pub p_value: f64,
    /// `false` when the variance of the difference is zero (then `z = 0`, `p = 1`).
    pub defined: bool,
}

/// Paired comparison of two AUCs on the same samples.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DeLong> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::contract("paired scores must have the same length"));
    }
    let (pos, neg) = check_binary(scores_a, labels)?;
    check_binary(scores_b, labels)?;
    require_both(pos, neg)?;
    let auc_a = auc(scores_a, labels)?;
    let auc_b = auc(scores_b, labels)?;
    let (a10, a01) = placements(scores_a, labels);
    let (b10, b01) = placements(scores_b, labels);
    let (m, n) = (pos as f64, neg as f64);
    let var_a = covariance(&a10, &a10) / m + covariance(&a01, &a01) / n;
    let var_b = covariance(&b10, &b10) / m + covariance(&b01, &b01) / n;
    let cov = covariance(&a10, &b10) / m + covariance(&a01, &b01) / n;
    let var_diff = var_a + var_b - 2.0 * cov;
    let (z, p_value, defined) = if var_diff > 1e-15 {
        let z = (auc_a - auc_b) / var_diff.sqrt();
        let phi = Normal::standard();
        (z, 2.0 * (1.0 - phi.cdf(z.abs())), true)
    } else {
        (0.0, 1.0, false)
    };
    Ok(DeLong {
        auc_a,
        auc_b,
        var_a,
        var_b,
        covariance: cov,
        z,
        p_value,
        defined,
    })
}
