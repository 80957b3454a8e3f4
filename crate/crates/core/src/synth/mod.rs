//! Labelled synthetic cohorts: biomarker trajectories, fundus-like images with
//! lesion ground truth, risk labels and censored progression times.

mod cohort;
mod fundus;

pub use cohort::{
    gen_biomarkers, gen_clinical, gen_cohort, gen_patient, ls_slope, risk_score, ClinicalRecord, CohortConfig,
    Gaussian, PatientRecord, RiskModel, Trajectory,
};
pub use fundus::{gen_fundus, lesion_counts, Lesion, LesionBox, LesionKind, SyntheticFundus};
