use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::Sample;
use super::split::{stratified_kfold, stratified_split, Split};
use super::trainer::{train, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{build_report, summarize_reports, MeanStd, MetricsReport, PredictionRecord};
use crate::fusion::FusionModel;
use crate::io::RunConfig;

fn labels(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(|s| s.grade).collect()
}

/// A freshly initialised model for `cfg`, seeded from `seed`.
pub fn init_model(cfg: &RunConfig, seed: u64) -> Result<FusionModel> {
    FusionModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Initialises and trains a model on `split.train`, validating on `split.val`.
pub fn fit(cfg: &RunConfig, samples: &[Sample], split: &Split, seed: u64) -> Result<(FusionModel, TrainOutcome)> {
    let mut model = init_model(cfg, seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let outcome = train(
        &mut model,
        samples,
        &split.train,
        &split.val,
        &train_cfg,
        &cfg.loss,
        &cfg.optim,
        &cfg.preprocess,
    )?;
    Ok((model, outcome))
}

/// Prediction records for `idx`. With `mc_samples` the grade and risk come
/// from the Monte-Carlo mean and carry σ and a 95% interval; without, from a
/// single dropout-free pass. Each sample's dropout stream depends only on
/// `seed` and its patient id (see [`patient_stream`]).
pub fn predict(
    model: &FusionModel,
    samples: &[Sample],
    idx: &[usize],
    mc_samples: Option<usize>,
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    idx.iter()
        .map(|&i| {
            let s = samples
                .get(i)
                .ok_or_else(|| Error::contract(format!("sample index {i} out of range")))?;
            let input = s.input();
            let pred = match mc_samples {
                Some(k) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(patient_stream(&s.id));
                    model.mc_predict(&input, k, &mut rng)?
                }
                None => model.predict_deterministic(&input)?,
            };
            Ok(PredictionRecord {
                patient_id: s.id.clone(),
                true_grade: s.grade,
                pred_grade: pred.grade,
                probs: pred.class_probs.clone(),
                risk: pred.risk,
                progression_months: s.progression_months,
                event: s.event,
                risk_sigma: pred.sigma,
                ci_low: pred.ci95.map(|c| c.0),
                ci_high: pred.ci95.map(|c| c.1),
            })
        })
        .collect()
}

/// ChaCha stream for a patient's MC passes: the first eight bytes of SHA-256(id).
pub fn patient_stream(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Result of one split/train/evaluate run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: FusionModel,
    pub outcome: TrainOutcome,
    pub split: Split,
    pub predictions: Vec<PredictionRecord>,
    pub report: MetricsReport,
}

/// Stratified split, training, and a report on the test part.
pub fn run_experiment(cfg: &RunConfig, samples: &[Sample]) -> Result<Experiment> {
    let split = stratified_split(&labels(samples), cfg.train.split, cfg.seed)?;
    if split.test.is_empty() {
        return Err(Error::config("the test fraction leaves no samples to evaluate"));
    }
    let (model, outcome) = fit(cfg, samples, &split, cfg.seed)?;
    let mc = cfg.bayesian.then_some(cfg.train.mc_samples);
    let predictions = predict(&model, samples, &split.test, mc, cfg.seed)?;
    let report = build_report(&predictions)?;
    Ok(Experiment {
        model,
        outcome,
        split,
        predictions,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<MetricsReport>,
    pub summary: std::collections::BTreeMap<String, MeanStd>,
}

/// `k` stratified folds. Fold `f` is tested on part `f`, validated on part
/// `f+1 (mod k)` and trained on the rest, from seed `seed + f`.
pub fn cross_validate(cfg: &RunConfig, samples: &[Sample], k: usize) -> Result<CvReport> {
    let parts = stratified_kfold(&labels(samples), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let v = (f + 1) % k;
        let split = Split {
            train: (0..k).filter(|&j| j != f && j != v).flat_map(|j| parts[j].iter().copied()).collect(),
            val: parts[v].clone(),
            test: parts[f].clone(),
        };
        if split.train.is_empty() {
            return Err(Error::config(format!("{k} folds leave no training data")));
        }
        let seed = cfg.seed.wrapping_add(f as u64);
        log::info!("fold={} train={} val={} test={}", f + 1, split.train.len(), split.val.len(), split.test.len());
        let (model, _) = fit(cfg, samples, &split, seed)?;
        let mc = cfg.bayesian.then_some(cfg.train.mc_samples);
        folds.push(build_report(&predict(&model, samples, &split.test, mc, seed)?)?);
    }
    let summary = summarize_reports(&folds)?;
    Ok(CvReport { folds, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoVit,
    NoGnn,
    NoAugmentation,
    NoBayesian,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoVit,
        AblationVariant::NoGnn,
        AblationVariant::NoAugmentation,
        AblationVariant::NoBayesian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoVit => "no_vit",
            AblationVariant::NoGnn => "no_gnn",
            AblationVariant::NoAugmentation => "no_augmentation",
            AblationVariant::NoBayesian => "no_bayesian",
        }
    }

    /// The run configuration with this variant's component removed.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoVit => c.model.use_vit = false,
            AblationVariant::NoGnn => c.model.use_gnn = false,
            AblationVariant::NoAugmentation => {
                c.train.augment = false;
                c.train.balance_classes = false;
            }
            AblationVariant::NoBayesian => c.bayesian = false,
        }
        c
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation variant '{s}'")))
    }
}

/// One comparison row of an ablation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub param_count: usize,
    pub fusion_input_dim: usize,
    pub epochs_run: usize,
    pub report: MetricsReport,
}

pub fn ablate(cfg: &RunConfig, samples: &[Sample], variant: AblationVariant) -> Result<AblationRow> {
    let c = variant.apply(cfg);
    c.validate()?;
    let exp = run_experiment(&c, samples)?;
    Ok(AblationRow {
        variant,
        param_count: exp.model.param_count(),
        fusion_input_dim: c.model.fusion_input_dim(),
        epochs_run: exp.outcome.history.epochs.len(),
        report: exp.report,
    })
}
