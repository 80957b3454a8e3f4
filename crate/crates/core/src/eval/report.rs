use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::clinical::{brier, dca_curve, default_dca_grid, DcaPoint};
use super::confusion::{classification_metrics, confusion, qwk, Averaging, ClassificationMetrics};
use super::ranking::{pr_auc, roc_auc, youden_threshold, PrPoint, RocPoint};
use super::survival::c_index;
use crate::error::{Error, Result};
use crate::NUM_GRADES;

/// One scored patient, as written to and read from a predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub true_grade: usize,
    pub pred_grade: usize,
    pub probs: Vec<f64>,
    pub risk: f64,
    pub progression_months: Option<f64>,
    pub event: Option<bool>,
    pub risk_sigma: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl PredictionRecord {
    /// Probability of any retinopathy (`1 − p_0`).
    pub fn dr_score(&self) -> f64 {
        (1.0 - self.probs.first().copied().unwrap_or(1.0)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub qwk: f64,
    /// Macro one-vs-rest over the five grades.
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    pub cohen_kappa: f64,
    pub ppv: f64,
    pub npv: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Any-DR detection (grade ≥ 1) at the predicted grade.
    pub detection: ClassificationMetrics,
    /// The remaining curves and scores use `1 − p_0` against grade ≥ 1.
    pub brier: f64,
    pub auc_roc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub youden_threshold: Option<f64>,
    pub youden_j: Option<f64>,
    pub c_index: Option<f64>,
    pub net_benefit: Vec<DcaPoint>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub confusion: Vec<Vec<u64>>,
    /// Metrics that were undefined on this data and reported as 0 or omitted.
    pub flags: Vec<String>,
}

pub fn build_report(records: &[PredictionRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::contract("cannot build a report from zero predictions"));
    }
    for r in records {
        if r.probs.len() != NUM_GRADES {
            return Err(Error::Format(format!("{}: expected {NUM_GRADES} probabilities", r.patient_id)));
        }
    }
    let truth: Vec<usize> = records.iter().map(|r| r.true_grade).collect();
    let pred: Vec<usize> = records.iter().map(|r| r.pred_grade).collect();
    let cm = confusion(&truth, &pred, NUM_GRADES)?;
    let mut flags = Vec::new();
    let k = qwk(&cm)?;
    if !k.defined {
        flags.push("qwk".to_string());
    }
    let macro_ = classification_metrics(&cm, &Averaging::Macro)?;
    flags.extend(macro_.undefined.iter().map(|m| format!("macro.{m}")));
    let positive: Vec<usize> = (1..NUM_GRADES).collect();
    let detection = classification_metrics(&cm, &Averaging::Binary { positive })?;
    flags.extend(detection.undefined.iter().map(|m| format!("detection.{m}")));

    let scores: Vec<f64> = records.iter().map(PredictionRecord::dr_score).collect();
    let labels: Vec<bool> = truth.iter().map(|&g| g >= 1).collect();
    let brier = brier(&scores, &labels)?;
    let roc = roc_auc(&scores, &labels).ok();
    let pr = pr_auc(&scores, &labels).ok();
    let youden = youden_threshold(&scores, &labels).ok();
    if roc.is_none() {
        flags.push("auc_roc".to_string());
    }
    if pr.is_none() {
        flags.push("pr_auc".to_string());
    }
    let net_benefit = dca_curve(&scores, &labels, &default_dca_grid())?;

    let surv: Vec<(f64, f64, bool)> = records
        .iter()
        .filter_map(|r| Some((r.risk, r.progression_months?, r.event?)))
        .collect();
    let c = if surv.is_empty() {
        None
    } else {
        let (r, (t, e)): (Vec<f64>, (Vec<f64>, Vec<bool>)) = surv.iter().map(|&(r, t, e)| (r, (t, e))).unzip();
        c_index(&r, &t, &e).ok()
    };
    if c.is_none() {
        flags.push("c_index".to_string());
    }

    Ok(MetricsReport {
        n: records.len(),
        accuracy: macro_.accuracy,
        qwk: k.value,
        sensitivity: macro_.sensitivity,
        specificity: macro_.specificity,
        f1: macro_.f1,
        mcc: macro_.mcc,
        cohen_kappa: macro_.cohen_kappa,
        ppv: macro_.ppv,
        npv: macro_.npv,
        macro_precision: macro_.macro_precision,
        macro_recall: macro_.macro_recall,
        detection,
        brier,
        auc_roc: roc.as_ref().map(|r| r.auc),
        pr_auc: pr.as_ref().map(|p| p.auc),
        youden_threshold: youden.map(|y| y.threshold),
        youden_j: youden.map(|y| y.j),
        c_index: c,
        net_benefit,
        roc: roc.map(|r| r.points).unwrap_or_default(),
        pr: pr.map(|p| p.points).unwrap_or_default(),
        confusion: cm.rows(),
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single report).
    pub std: f64,
}

/// Mean and standard deviation of every top-level scalar metric that is present in all reports.
pub fn summarize_reports(reports: &[MetricsReport]) -> Result<BTreeMap<String, MeanStd>> {
    let values: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::to_value(r).map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<_>>()?;
    let Some(first) = values.first().and_then(|v| v.as_object()) else {
        return Ok(BTreeMap::new());
    };
    let mut out = BTreeMap::new();
    for key in first.keys() {
        if key == "n" {
            continue;
        }
        let xs: Option<Vec<f64>> = values.iter().map(|v| v.get(key).and_then(|x| x.as_f64())).collect();
        let Some(xs) = xs else { continue };
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.insert(key.clone(), MeanStd { mean, std });
    }
    Ok(out)
}
