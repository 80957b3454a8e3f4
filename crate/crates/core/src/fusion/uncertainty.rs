use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal quantile for a two-sided 95% interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl fmt::Display for RiskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskTier::Low => "low",
            RiskTier::Medium => "medium",
            RiskTier::High => "high",
        })
    }
}

/// `low` below 0.3, `high` above 0.7, `medium` in between with both bounds inclusive.
pub fn stratify_risk(r: f64) -> Result<RiskTier> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::contract(format!("risk {r} outside [0, 1]")));
    }
    Ok(if r < 0.3 {
        RiskTier::Low
    } else if r <= 0.7 {
        RiskTier::Medium
    } else {
        RiskTier::High
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    /// Mean class probabilities over the passes.
    pub class_probs: Vec<f64>,
    /// Argmax of `class_probs`.
    pub grade: usize,
    /// Mean risk over the passes.
    pub risk: f64,
    /// Population standard deviation of the risk samples; absent for a single deterministic pass.
    pub sigma: Option<f64>,
    /// `risk ± 1.96·sigma/√K`.
    pub ci95: Option<(f64, f64)>,
    /// Per-class population standard deviation of the probabilities.
    pub class_sigma: Option<Vec<f64>>,
    pub tier: RiskTier,
    pub samples: usize,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Population mean and σ, shifted by the first sample so identical samples give exactly zero spread.
fn mean_std(xs: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let x0 = xs.clone().next().unwrap_or(0.0);
    let shift = xs.clone().map(|x| x - x0).sum::<f64>() / n;
    let var = xs.map(|x| (x - x0 - shift).powi(2)).sum::<f64>() / n;
    (x0 + shift, var.sqrt())
}

impl McPrediction {
    /// A single pass reported without spread.
    pub fn deterministic(class_probs: Vec<f64>, risk: f64) -> Result<Self> {
        Ok(Self {
            grade: argmax(&class_probs),
            tier: stratify_risk(risk)?,
            class_probs,
            risk,
            sigma: None,
            ci95: None,
            class_sigma: None,
            samples: 1,
        })
    }
}

/// Reduces `K ≥ 2` stochastic passes (probabilities, risk) to means, spread and interval.
pub fn summarize_mc(probs: &[Vec<f64>], risks: &[f64]) -> Result<McPrediction> {
    let k = risks.len();
    if k < 2 {
        return Err(Error::config(format!("MC dropout needs at least 2 samples, got {k}")));
    }
    if probs.len() != k {
        return Err(Error::contract("probability and risk sample counts differ"));
    }
    let c = probs[0].len();
    if probs.iter().any(|p| p.len() != c) {
        return Err(Error::contract("probability samples have different widths"));
    }
    let n = k as f64;
    let (risk, sigma) = mean_std(risks.iter().copied(), n);
    let (class_probs, class_sigma): (Vec<f64>, Vec<f64>) =
        (0..c).map(|j| mean_std(probs.iter().map(move |p| p[j]), n)).unzip();
    let half = CI_Z * sigma / n.sqrt();
    Ok(McPrediction {
        grade: argmax(&class_probs),
        tier: stratify_risk(risk.clamp(0.0, 1.0))?,
        class_probs,
        risk,
        sigma: Some(sigma),
        ci95: Some((risk - half, risk + half)),
        class_sigma: Some(class_sigma),
        samples: k,
    })
}
