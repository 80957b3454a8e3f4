use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean squared difference between probabilities and binary outcomes.
pub fn brier(probs: &[f64], outcomes: &[bool]) -> Result<f64> {
    if probs.len() != outcomes.len() || probs.is_empty() {
        return Err(Error::contract("brier needs aligned, non-empty inputs"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::contract(format!("probability {p} outside [0, 1]")));
    }
    Ok(probs
        .iter()
        .zip(outcomes)
        .map(|(p, &y)| (p - f64::from(u8::from(y))).powi(2))
        .sum::<f64>()
        / probs.len() as f64)
}

fn check_threshold(p_t: f64) -> Result<()> {
    if !(p_t > 0.0 && p_t < 1.0) {
        return Err(Error::contract(format!("threshold probability {p_t} must lie in (0, 1)")));
    }
    Ok(())
}

/// `TP/N − (FP/N)·p_t/(1−p_t)` for the positives predicted at `p_t`.
pub fn net_benefit(predicted: &[bool], labels: &[bool], p_t: f64) -> Result<f64> {
    check_threshold(p_t)?;
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::contract("net benefit needs aligned, non-empty inputs"));
    }
    let n = labels.len() as f64;
    let tp = predicted.iter().zip(labels).filter(|(&p, &l)| p && l).count() as f64;
    let fp = predicted.iter().zip(labels).filter(|(&p, &l)| p && !l).count() as f64;
    Ok(tp / n - fp / n * p_t / (1.0 - p_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaPoint {
    pub p_t: f64,
    pub net_benefit: f64,
    /// Net benefit of treating everyone; treating no one is always 0.
    pub treat_all_benefit: f64,
}

/// `{0.01, 0.02, …, 0.99}`.
pub fn default_dca_grid() -> Vec<f64> {
    (1..100).map(|i| f64::from(i) / 100.0).collect()
}

/// Net benefit of "treat when score ≥ p_t" across `grid`.
pub fn dca_curve(scores: &[f64], labels: &[bool], grid: &[f64]) -> Result<Vec<DcaPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels must be aligned"));
    }
    let all = vec![true; labels.len()];
    grid.iter()
        .map(|&p_t| {
            let predicted: Vec<bool> = scores.iter().map(|&s| s >= p_t).collect();
            Ok(DcaPoint {
                p_t,
                net_benefit: net_benefit(&predicted, labels, p_t)?,
                treat_all_benefit: net_benefit(&all, labels, p_t)?,
            })
        })
        .collect()
}
