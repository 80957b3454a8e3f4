use std::path::Path;

use serde::Serialize;

use super::atomic::write_atomic;
use super::tables::write_csv;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const REPORT_FILE: &str = "report.json";

/// Pretty JSON written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `report.json` plus `roc.csv`, `pr.csv`, `dca.csv` and `confusion.csv` under `dir`.
pub fn write_evaluation(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)?;
    write_csv(&dir.join("roc.csv"), &report.roc)?;
    write_csv(&dir.join("pr.csv"), &report.pr)?;
    write_csv(&dir.join("dca.csv"), &report.net_benefit)?;
    let k = report.confusion.len();
    let mut text = String::from("true_grade");
    for j in 0..k {
        text.push_str(&format!(",pred_{j}"));
    }
    text.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        text.push_str(&i.to_string());
        for c in row {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    write_atomic(&dir.join("confusion.csv"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{build_report, PredictionRecord};

    #[test]
    fn evaluation_files_are_written() {
        let records: Vec<PredictionRecord> = (0..10)
            .map(|i| {
                let g = i % 5;
                let mut probs = vec![0.05; 5];
                probs[g] = 0.8;
                PredictionRecord {
                    patient_id: format!("P{i}"),
                    true_grade: g,
                    pred_grade: g,
                    probs,
                    risk: g as f64 / 5.0,
                    progression_months: Some(100.0 - 10.0 * g as f64),
                    event: Some(true),
                    risk_sigma: None,
                    ci_low: None,
                    ci_high: None,
                }
            })
            .collect();
        let report = build_report(&records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_evaluation(dir.path(), &report).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(json["accuracy"], 1.0);
        let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        let lines: Vec<&str> = confusion.lines().collect();
        assert_eq!(lines[0], "true_grade,pred_0,pred_1,pred_2,pred_3,pred_4");
        assert_eq!(lines[3], "2,0,0,2,0,0");
        for f in ["roc.csv", "pr.csv", "dca.csv"] {
            assert!(std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count() > 1, "{f}");
        }
    }
}
