use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use super::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::fusion::Metadata;
use crate::graph::{Biomarker, BiomarkerSeries};
use crate::synth::{Lesion, LesionKind, PatientRecord};
use crate::NUM_GRADES;

/// `patient_id,image_path,grade,risk,progression_months,event,age,diabetes_years`.
/// Risk and progression columns may be empty or absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub image_path: PathBuf,
    pub grade: usize,
    #[serde(default)]
    pub risk: Option<f64>,
    #[serde(default)]
    pub progression_months: Option<f64>,
    #[serde(default, deserialize_with = "flag", serialize_with = "flag_out")]
    pub event: Option<bool>,
    pub age: f64,
    pub diabetes_years: f64,
}

impl ManifestRow {
    pub fn metadata(&self) -> Metadata {
        Metadata {
            age: self.age,
            diabetes_years: self.diabetes_years,
        }
    }
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<bool>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    match s.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some("1") | Some("true") => Ok(Some(true)),
        Some("0") | Some("false") => Ok(Some(false)),
        Some(other) => Err(serde::de::Error::custom(format!("event flag '{other}' is not 0/1"))),
    }
}

fn flag_out<S: serde::Serializer>(v: &Option<bool>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(b) => s.serialize_str(if *b { "1" } else { "0" }),
        None => s.serialize_str(""),
    }
}

/// Long-format biomarker row: `patient_id,biomarker,month,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRow {
    pub patient_id: String,
    pub biomarker: String,
    pub month: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRow {
    pub patient_id: String,
    pub kind: LesionKind,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            // Row 1 is the header.
            row.map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let rows: Vec<ManifestRow> = from_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.grade >= NUM_GRADES {
            return Err(Error::Format(format!("{}: row {}: grade {} outside 0..4", path.display(), i + 2, r.grade)));
        }
        if let Some(risk) = r.risk {
            if !(0.0..=1.0).contains(&risk) {
                return Err(Error::Format(format!("{}: row {}: risk {risk} outside [0, 1]", path.display(), i + 2)));
            }
        }
        if r.progression_months.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Format(format!("{}: row {}: progression time must be positive", path.display(), i + 2)));
        }
    }
    Ok(rows)
}

/// Groups long-format rows into per-patient series, sorted by month.
pub fn read_biomarkers(path: &Path) -> Result<BTreeMap<String, Vec<BiomarkerSeries>>> {
    let rows: Vec<BiomarkerRow> = from_csv(path)?;
    let mut grouped: BTreeMap<String, BTreeMap<Biomarker, Vec<(f64, f64)>>> = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        let b: Biomarker = r
            .biomarker
            .parse()
            .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        grouped.entry(r.patient_id).or_default().entry(b).or_default().push((r.month, r.value));
    }
    grouped
        .into_iter()
        .map(|(id, per)| {
            let series = per
                .into_iter()
                .map(|(b, mut pts)| {
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let (t, v) = pts.into_iter().unzip();
                    BiomarkerSeries::new(b, t, v).map_err(|e| Error::Format(format!("{}: {id}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id, series))
        })
        .collect()
}

pub fn read_lesions(path: &Path) -> Result<BTreeMap<String, Vec<Lesion>>> {
    let rows: Vec<LesionRow> = from_csv(path)?;
    let mut out: BTreeMap<String, Vec<Lesion>> = BTreeMap::new();
    for r in rows {
        out.entry(r.patient_id).or_default().push(Lesion {
            kind: r.kind,
            x: r.x,
            y: r.y,
            radius: r.radius,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRow {
    patient_id: String,
    true_grade: usize,
    pred_grade: usize,
    p0: f64,
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    risk: f64,
    #[serde(default)]
    progression_months: Option<f64>,
    #[serde(default, deserialize_with = "flag", serialize_with = "flag_out")]
    event: Option<bool>,
    #[serde(default)]
    risk_sigma: Option<f64>,
    #[serde(default)]
    ci_low: Option<f64>,
    #[serde(default)]
    ci_high: Option<f64>,
}

/// `patient_id,true_grade,pred_grade,p0..p4,risk,progression_months,event,risk_sigma,ci_low,ci_high`.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let rows: Vec<PredictionRow> = records
        .iter()
        .map(|r| {
            if r.probs.len() != NUM_GRADES {
                return Err(Error::contract(format!("{}: expected {NUM_GRADES} probabilities", r.patient_id)));
            }
            Ok(PredictionRow {
                patient_id: r.patient_id.clone(),
                true_grade: r.true_grade,
                pred_grade: r.pred_grade,
                p0: r.probs[0],
                p1: r.probs[1],
                p2: r.probs[2],
                p3: r.probs[3],
                p4: r.probs[4],
                risk: r.risk,
                progression_months: r.progression_months,
                event: r.event,
                risk_sigma: r.risk_sigma,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
            })
        })
        .collect::<Result<_>>()?;
    write_csv(path, &rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let rows: Vec<PredictionRow> = from_csv(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.true_grade >= NUM_GRADES || r.pred_grade >= NUM_GRADES {
                return Err(Error::Format(format!("{}: row {}: grade outside 0..4", path.display(), i + 2)));
            }
            Ok(PredictionRecord {
                patient_id: r.patient_id,
                true_grade: r.true_grade,
                pred_grade: r.pred_grade,
                probs: vec![r.p0, r.p1, r.p2, r.p3, r.p4],
                risk: r.risk,
                progression_months: r.progression_months,
                event: r.event,
                risk_sigma: r.risk_sigma,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
            })
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const BIOMARKER_FILE: &str = "biomarkers.csv";
pub const LESION_FILE: &str = "lesions.csv";

/// Writes `images/`, `masks/`, `manifest.csv`, `biomarkers.csv` and `lesions.csv` under `dir`.
pub fn write_cohort(dir: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut manifest = Vec::with_capacity(records.len());
    let mut markers = Vec::new();
    let mut lesions = Vec::new();
    for rec in records {
        let c = &rec.clinical;
        let image_path = PathBuf::from("images").join(format!("{}.png", c.patient_id));
        rec.fundus.image.save(&dir.join(&image_path))?;
        let size = rec.fundus.size();
        let mask = crate::preprocess::FundusImage::new(
            size,
            size,
            1,
            rec.fundus.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        mask.save(&dir.join("masks").join(format!("{}.png", c.patient_id)))?;
        manifest.push(ManifestRow {
            patient_id: c.patient_id.clone(),
            image_path,
            grade: c.grade,
            risk: Some(c.risk),
            progression_months: Some(c.progression_months),
            event: Some(c.event),
            age: c.metadata.age,
            diabetes_years: c.metadata.diabetes_years,
        });
        for s in &c.biomarkers {
            for (&t, &v) in s.timestamps.iter().zip(&s.values) {
                markers.push(BiomarkerRow {
                    patient_id: c.patient_id.clone(),
                    biomarker: s.biomarker.name().to_string(),
                    month: t,
                    value: v,
                });
            }
        }
        lesions.extend(rec.fundus.lesions.iter().map(|l| LesionRow {
            patient_id: c.patient_id.clone(),
            kind: l.kind,
            x: l.x,
            y: l.y,
            radius: l.radius,
        }));
    }
    write_csv(&dir.join(MANIFEST_FILE), &manifest)?;
    write_csv(&dir.join(BIOMARKER_FILE), &markers)?;
    write_csv(&dir.join(LESION_FILE), &lesions)
}
