use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fundus::{gen_fundus, SyntheticFundus};
use crate::error::{Error, Result};
use crate::fusion::Metadata;
use crate::graph::{Biomarker, BiomarkerSeries};
use crate::numerics::sigmoid;
use crate::NUM_GRADES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    fn dist(&self) -> Result<Normal<f64>> {
        Normal::new(self.mean, self.sd).map_err(|e| Error::config(format!("gaussian {self:?}: {e}")))
    }
}

/// Per-biomarker trajectory: baseline distribution, drift per visit per grade, visit noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub baseline: Gaussian,
    pub drift_per_grade: f64,
    pub visit_noise: f64,
}

/// `r = logistic(intercept + slope·HbA1c_slope + drop·thickness_drop + grade·g + N(0, noise_sd))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskModel {
    pub intercept: f64,
    /// Per unit of HbA1c least-squares slope (% per visit).
    pub slope: f64,
    /// Per µm of thickness lost between the first and last visit.
    pub drop: f64,
    pub grade: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n: usize,
    pub priors: [f64; NUM_GRADES],
    pub hba1c: Trajectory,
    pub thickness: Trajectory,
    pub vegf: Trajectory,
    pub visits: usize,
    pub visit_interval_months: f64,
    /// Spread of the per-patient pace `max(0, 1 + N(0, pace_sd))` that scales every drift.
    pub pace_sd: f64,
    pub age: Gaussian,
    /// Diabetes duration is `base + per_grade·g + N(0, sd)`, floored at 0.
    pub duration_base: f64,
    pub duration_per_grade: f64,
    pub duration_sd: f64,
    pub risk: RiskModel,
    /// Median-scale of progression times, in months.
    pub time_scale_months: f64,
    pub censoring: f64,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n: 200,
            priors: [0.49, 0.10, 0.27, 0.05, 0.09],
            hba1c: Trajectory {
                baseline: Gaussian { mean: 7.0, sd: 1.5 },
                drift_per_grade: 0.05,
                visit_noise: 0.15,
            },
            thickness: Trajectory {
                baseline: Gaussian { mean: 250.0, sd: 20.0 },
                drift_per_grade: -2.0,
                visit_noise: 3.0,
            },
            vegf: Trajectory {
                baseline: Gaussian { mean: 100.0, sd: 30.0 },
                drift_per_grade: 4.0,
                visit_noise: 8.0,
            },
            visits: 6,
            visit_interval_months: 6.0,
            pace_sd: 0.5,
            age: Gaussian { mean: 55.0, sd: 12.0 },
            duration_base: 5.0,
            duration_per_grade: 2.0,
            duration_sd: 5.0,
            risk: RiskModel {
                intercept: -1.6,
                slope: 3.0,
                drop: 0.08,
                grade: 0.1,
                noise_sd: 0.5,
            },
            time_scale_months: 120.0,
            censoring: 0.2,
            image_size: 64,
            seed: 7,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.priors.iter().any(|&p| !(p >= 0.0)) || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("class priors {:?} must be non-negative and sum to 1", self.priors)));
        }
        for (name, t) in [("hba1c", &self.hba1c), ("thickness", &self.thickness), ("vegf", &self.vegf)] {
            if !(t.baseline.sd >= 0.0 && t.visit_noise >= 0.0) || !t.baseline.mean.is_finite() {
                return Err(Error::config(format!("{name}: standard deviations must be non-negative")));
            }
        }
        if self.visits == 0 || !(self.visit_interval_months > 0.0) {
            return Err(Error::config("at least one visit with a positive interval is required"));
        }
        if !(self.age.sd >= 0.0 && self.duration_sd >= 0.0 && self.risk.noise_sd >= 0.0 && self.pace_sd >= 0.0) {
            return Err(Error::config("standard deviations must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.censoring) || !(self.time_scale_months > 0.0) {
            return Err(Error::config("censoring must be in [0, 1) and time scale positive"));
        }
        if self.image_size < 16 {
            return Err(Error::config("image_size must be at least 16"));
        }
        Ok(())
    }
}

/// Ground-truth clinical labels of one synthetic patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub grade: usize,
    pub biomarkers: Vec<BiomarkerSeries>,
    pub metadata: Metadata,
    pub risk: f64,
    pub progression_months: f64,
    /// `false` when the time is a censoring time.
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub clinical: ClinicalRecord,
    pub fundus: SyntheticFundus,
}

/// HbA1c, thickness and VEGF series at months `0, Δ, …, Δ(T−1)`. Visit 0 is the
/// baseline draw; later visits add `pace·drift·grade·k` and visit noise.
pub fn gen_biomarkers<R: Rng + ?Sized>(grade: usize, cfg: &CohortConfig, rng: &mut R) -> Result<Vec<BiomarkerSeries>> {
    if grade >= NUM_GRADES {
        return Err(Error::contract(format!("grade {grade} outside 0..{NUM_GRADES}")));
    }
    let times: Vec<f64> = (0..cfg.visits).map(|k| k as f64 * cfg.visit_interval_months).collect();
    let pace = (1.0 + Gaussian { mean: 0.0, sd: cfg.pace_sd }.dist()?.sample(rng)).max(0.0);
    let mut out = Vec::with_capacity(3);
    for (b, t) in [
        (Biomarker::Hba1c, &cfg.hba1c),
        (Biomarker::RetinalThickness, &cfg.thickness),
        (Biomarker::Vegf, &cfg.vegf),
    ] {
        let base = t.baseline.dist()?.sample(rng);
        let noise = Gaussian { mean: 0.0, sd: t.visit_noise }.dist()?;
        let mut values = vec![base];
        for k in 1..cfg.visits {
            values.push(base + pace * t.drift_per_grade * grade as f64 * k as f64 + noise.sample(rng));
        }
        out.push(BiomarkerSeries::new(b, times.clone(), values)?);
    }
    Ok(out)
}

/// Least-squares slope of `values` against their index.
pub fn ls_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn draw_grade<R: Rng + ?Sized>(priors: &[f64; NUM_GRADES], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, &p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn series_of(series: &[BiomarkerSeries], b: Biomarker) -> &[f64] {
    series
        .iter()
        .find(|s| s.biomarker == b)
        .map(|s| s.values.as_slice())
        .unwrap_or(&[])
}

/// Risk label implied by a patient's trajectories and grade, before noise.
pub fn risk_score(series: &[BiomarkerSeries], grade: usize, model: &RiskModel) -> f64 {
    let h = series_of(series, Biomarker::Hba1c);
    let t = series_of(series, Biomarker::RetinalThickness);
    let drop = match (t.first(), t.last()) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };
    model.intercept + model.slope * ls_slope(h) + model.drop * drop + model.grade * grade as f64
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Clinical part of patient `index`; a pure function of `(cfg, index)`.
pub fn gen_clinical(cfg: &CohortConfig, index: usize) -> Result<ClinicalRecord> {
    let rng = &mut patient_rng(cfg.seed, 2 * index as u64);
    let grade = draw_grade(&cfg.priors, rng);
    let biomarkers = gen_biomarkers(grade, cfg, rng)?;
    let age = cfg.age.dist()?.sample(rng).clamp(Metadata::AGE_RANGE.0, Metadata::AGE_RANGE.1);
    let dur = cfg.duration_base
        + cfg.duration_per_grade * grade as f64
        + Gaussian { mean: 0.0, sd: cfg.duration_sd }.dist()?.sample(rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let z = risk_score(&biomarkers, grade, &cfg.risk) + cfg.risk.noise_sd * unit.sample(rng);
    let risk = sigmoid(z).clamp(0.0, 1.0);
    let time = cfg.time_scale_months * (-2.5 * risk + 0.25 * unit.sample(rng)).exp();
    let censored = rng.random::<f64>() < cfg.censoring;
    let observed = if censored { time * rng.random_range(0.3..1.0) } else { time };
    Ok(ClinicalRecord {
        patient_id: format!("P{index:05}"),
        grade,
        biomarkers,
        metadata: Metadata {
            age,
            diabetes_years: dur.max(0.0),
        },
        risk,
        progression_months: observed,
        event: !censored,
    })
}

/// Patient `index` with its rendered fundus (drawn from a stream of its own).
pub fn gen_patient(cfg: &CohortConfig, index: usize) -> Result<PatientRecord> {
    let clinical = gen_clinical(cfg, index)?;
    let fundus = gen_fundus(clinical.grade, cfg.image_size, &mut patient_rng(cfg.seed, 2 * index as u64 + 1))?;
    Ok(PatientRecord { clinical, fundus })
}

pub fn gen_cohort(cfg: &CohortConfig) -> Result<Vec<PatientRecord>> {
    cfg.validate()?;
    (0..cfg.n).map(|i| gen_patient(cfg, i)).collect()
}
