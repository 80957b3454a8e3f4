use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::HeadOutput;
use crate::numerics::{Tape, Var};
use crate::NUM_GRADES;

/// Probabilities are floored here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Per-grade focal weights.
    pub alpha: Vec<f64>,
    pub gamma: f64,
    /// Weight of the risk MSE term.
    pub lambda_mse: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: vec![0.2, 0.25, 0.2, 0.2, 0.15],
            gamma: 2.0,
            lambda_mse: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != NUM_GRADES || self.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::config(format!("alpha needs {NUM_GRADES} positive weights")));
        }
        if !(self.gamma >= 0.0) || !(self.lambda_mse >= 0.0) {
            return Err(Error::config("gamma and lambda_mse must be non-negative"));
        }
        Ok(())
    }
}

/// `-α_c (1 - p_c)^γ ln p_c` for the true class `c`.
///
/// The leading minus makes the loss non-negative; without it the term would
/// be negative for every `p_c < 1`.
pub fn focal_loss(probs: &[f64], true_class: usize, cfg: &LossConfig) -> Result<f64> {
    let p = *probs
        .get(true_class)
        .ok_or_else(|| Error::contract(format!("class {true_class} outside {} probabilities", probs.len())))?;
    let alpha = cfg.alpha.get(true_class).copied().unwrap_or(1.0);
    Ok(-alpha * (1.0 - p).powf(cfg.gamma) * p.max(PROB_FLOOR).ln())
}

/// Mean focal loss plus `λ` times the mean squared risk error over samples that carry a risk label.
pub fn total_loss(
    probs: &[Vec<f64>],
    labels: &[usize],
    risk_pred: &[f64],
    risk_true: &[Option<f64>],
    cfg: &LossConfig,
) -> Result<f64> {
    let n = probs.len();
    if n == 0 || labels.len() != n || risk_pred.len() != n || risk_true.len() != n {
        return Err(Error::contract("batch predictions and labels must be non-empty and aligned"));
    }
    let mut focal = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        focal += focal_loss(p, y, cfg)?;
    }
    let (mut se, mut m) = (0.0, 0usize);
    for (r_hat, r) in risk_pred.iter().zip(risk_true) {
        if let Some(r) = r {
            se += (r - r_hat).powi(2);
            m += 1;
        }
    }
    let mse = if m > 0 { se / m as f64 } else { 0.0 };
    Ok(focal / n as f64 + cfg.lambda_mse * mse)
}

/// Differentiable focal term for one `[1×C]` probability row.
pub fn focal_loss_var(tape: &mut Tape, probs: Var, true_class: usize, cfg: &LossConfig) -> Result<Var> {
    let alpha = *cfg
        .alpha
        .get(true_class)
        .ok_or_else(|| Error::contract(format!("class {true_class} has no alpha weight")))?;
    let p = tape.slice_cols(probs, true_class, 1)?;
    let log_p = tape.ln(p, PROB_FLOOR);
    let q = tape.affine(p, -1.0, 1.0);
    let w = if cfg.gamma == 0.0 { None } else { Some(tape.powf(q, cfg.gamma)) };
    let term = match w {
        Some(w) => tape.mul(w, log_p)?,
        None => log_p,
    };
    Ok(tape.scale(term, -alpha))
}

/// Differentiable version of [`total_loss`] over a batch of head outputs.
pub fn total_loss_var(
    tape: &mut Tape,
    outputs: &[HeadOutput],
    labels: &[usize],
    risks: &[Option<f64>],
    cfg: &LossConfig,
) -> Result<Var> {
    let n = outputs.len();
    if n == 0 || labels.len() != n || risks.len() != n {
        return Err(Error::contract("batch outputs and labels must be non-empty and aligned"));
    }
    let mut focal = Vec::with_capacity(n);
    let mut sq = Vec::new();
    for ((o, &y), r) in outputs.iter().zip(labels).zip(risks) {
        focal.push(focal_loss_var(tape, o.probs, y, cfg)?);
        if let Some(r) = r {
            let d = tape.affine(o.risk, 1.0, -r);
            sq.push(tape.mul(d, d)?);
        }
    }
    let stacked = tape.concat_rows(&focal)?;
    let mut loss = tape.mean(stacked);
    if !sq.is_empty() && cfg.lambda_mse != 0.0 {
        let stacked = tape.concat_rows(&sq)?;
        let mse = tape.mean(stacked);
        let weighted = tape.scale(mse, cfg.lambda_mse);
        loss = tape.add(loss, weighted)?;
    }
    Ok(loss)
}
