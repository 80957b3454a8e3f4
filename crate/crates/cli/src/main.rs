use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use retinafuse::fusion::{McPrediction, Metadata, SaliencyTarget};
use retinafuse::io::{
    load_checkpoint, load_dataset, read_biomarkers, read_manifest, read_predictions, resolve_image, save_checkpoint,
    write_cohort, write_csv, write_evaluation, write_json, write_predictions, Checkpoint, QualityRow, RngState,
    RunConfig, MANIFEST_FILE, SEED_ENV,
};
use retinafuse::preprocess::{enhance, quality_check, FundusImage};
use retinafuse::synth::gen_cohort;
use retinafuse::training::{ablate, cross_validate, patient_stream, run_experiment, AblationVariant, Sample};

const CHECKPOINT_FILE: &str = "model.tprs";
const CONFIG_FILE: &str = "config.toml";
const QUALITY_FILE: &str = "quality.csv";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] retinafuse::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Multi-modal retinopathy grading and progression-risk pipeline.
#[derive(Debug, Parser)]
#[command(name = "retinafuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled synthetic cohort (images, masks, manifest, biomarkers, lesions).
    Synth {
        #[arg(long)]
        n: usize,
        /// Cohort seed; defaults to the configured cohort seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Enhance every image of a manifest and write a blur rejection report.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a manifest, then evaluate the held-out split.
    Train(RunArgs),
    /// Compute the metrics report and plotting tables from a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grade one image with MC-dropout uncertainty and print a JSON record.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Long-format biomarker CSV (`patient_id,biomarker,month,value`).
        #[arg(long)]
        biomarkers: PathBuf,
        /// `age=<years>,diabetes_years=<years>`.
        #[arg(long)]
        meta: String,
        /// Patient whose biomarker rows to use; required when the CSV holds several.
        #[arg(long)]
        patient: Option<String>,
        /// Run configuration; defaults to the `config.toml` saved beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the risk saliency map as a grayscale PNG.
        #[arg(long)]
        saliency: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Retrain with one component removed; every variant when none is given.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        variant: Option<AblationVariant>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory or its `manifest.csv`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn resolve_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    let cfg = cfg.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    cfg.validate()?;
    let json = serde_json::to_string(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    info!("resolved configuration preset={:?} seed={} config={json}", cfg.preset, cfg.seed);
    Ok(cfg)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load_samples(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<Vec<Sample>> {
    let t = Instant::now();
    let ds = load_dataset(&manifest_path(data), &cfg.preprocess, cfg.model.time_scale)?;
    write_csv(&out.join(QUALITY_FILE), &ds.quality)?;
    info!(
        "loaded dataset samples={} rejected={} seconds={:.1}",
        ds.samples.len(),
        ds.rejected(),
        t.elapsed().as_secs_f64()
    );
    if ds.samples.is_empty() {
        return Err(CliError::Usage("no usable samples after quality filtering".into()));
    }
    Ok(ds.samples)
}

fn synth(n: usize, seed: Option<u64>, out: &Path, config: Option<&Path>) -> CliResult<()> {
    let mut cfg = resolve_config(config)?;
    cfg.cohort.n = n;
    if let Some(s) = seed {
        cfg.cohort.seed = s;
    }
    cfg.cohort.validate()?;
    let recs = gen_cohort(&cfg.cohort)?;
    write_cohort(out, &recs)?;
    info!("wrote cohort n={n} cohort_seed={} out={}", cfg.cohort.seed, out.display());
    Ok(())
}

fn preprocess(manifest: &Path, out: &Path, config: Option<&Path>) -> CliResult<()> {
    let cfg = resolve_config(config)?;
    let rows = read_manifest(manifest)?;
    let mut quality = Vec::with_capacity(rows.len());
    for row in &rows {
        let path = resolve_image(manifest, row);
        let raw = FundusImage::load(&path)?;
        let q = quality_check(&raw, &cfg.preprocess);
        if q.accepted {
            enhance(&raw, &cfg.preprocess)?.save(&out.join("images").join(format!("{}.png", row.patient_id)))?;
        } else {
            warn!("rejected blurry image path={} laplacian_variance={:.3}", path.display(), q.laplacian_variance);
        }
        quality.push(QualityRow {
            path,
            laplacian_variance: q.laplacian_variance,
            accepted: q.accepted,
        });
    }
    write_csv(&out.join(QUALITY_FILE), &quality)?;
    let rejected = quality.iter().filter(|q| !q.accepted).count();
    info!("preprocessed images={} rejected={rejected} out={}", rows.len(), out.display());
    Ok(())
}

fn train_cmd(args: &RunArgs) -> CliResult<()> {
    let cfg = resolve_config(args.config.as_deref())?;
    let out = &args.out;
    let samples = load_samples(&cfg, &args.data, out)?;
    let t = Instant::now();
    let exp = run_experiment(&cfg, &samples)?;
    let h = &exp.outcome.history;
    for e in &h.epochs {
        info!(
            "epoch={} train_loss={:.5} val_loss={:.5} val_acc={:.3} lr={}",
            e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr
        );
    }
    info!(
        "training finished stop={:?} best_epoch={} best_val_loss={:.5} seconds={:.1}",
        h.stop_reason,
        h.best_epoch,
        h.best_val_loss,
        t.elapsed().as_secs_f64()
    );
    let ck = Checkpoint {
        model: exp.model.clone(),
        adam: Some(exp.outcome.adam.clone()),
        rng: Some(RngState::capture(&ChaCha8Rng::seed_from_u64(cfg.seed))),
        best_val_loss: h.best_val_loss,
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &ck)?;
    let toml = cfg.to_toml_string()?;
    retinafuse::io::write_atomic(&out.join(CONFIG_FILE), toml.as_bytes())?;
    retinafuse::io::write_atomic(&out.join("history.csv"), h.to_csv().as_bytes())?;
    write_json(&out.join("split.json"), &exp.split)?;
    write_predictions(&out.join("predictions.csv"), &exp.predictions)?;
    write_evaluation(out, &exp.report)?;
    info!(
        "test accuracy={:.4} qwk={:.4} c_index={} out={}",
        exp.report.accuracy,
        exp.report.qwk,
        exp.report.c_index.map_or("none".into(), |c| format!("{c:.4}")),
        out.display()
    );
    Ok(())
}

fn evaluate(predictions: &Path, out: &Path) -> CliResult<()> {
    let records = read_predictions(predictions)?;
    let report = retinafuse::eval::build_report(&records)?;
    write_evaluation(out, &report)?;
    info!("evaluated n={} accuracy={:.4} out={}", report.n, report.accuracy, out.display());
    Ok(())
}

fn parse_meta(s: &str) -> CliResult<Metadata> {
    let mut fields = BTreeMap::new();
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--meta: expected key=value, got '{part}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("--meta: '{v}' is not a number")))?;
        fields.insert(k.trim().to_string(), v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("--meta: missing '{k}'")))
    };
    let meta = Metadata {
        age: get("age")?,
        diabetes_years: get("diabetes_years")?,
    };
    if fields.len() != 2 {
        return Err(CliError::Usage("--meta accepts only age and diabetes_years".into()));
    }
    Ok(meta)
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    patient_id: String,
    #[serde(flatten)]
    prediction: McPrediction,
}

#[allow(clippy::too_many_arguments)]
fn predict(
    checkpoint: &Path,
    image: &Path,
    biomarkers: &Path,
    meta: &str,
    patient: Option<&str>,
    config: Option<&Path>,
    saliency: Option<&Path>,
) -> CliResult<()> {
    let config = config.map(Path::to_path_buf).or_else(|| {
        let sibling = checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
        sibling.exists().then_some(sibling)
    });
    let cfg = resolve_config(config.as_deref())?;
    let ck = load_checkpoint(checkpoint, Some(&cfg.model))?;
    let metadata = parse_meta(meta)?;
    let series = read_biomarkers(biomarkers)?;
    let (id, series) = match patient {
        Some(p) => series
            .get_key_value(p)
            .ok_or_else(|| CliError::Usage(format!("{}: no rows for patient {p}", biomarkers.display())))?,
        None if series.len() == 1 => series.iter().next().expect("one patient"),
        None => {
            return Err(CliError::Usage(format!(
                "{} holds {} patients; choose one with --patient",
                biomarkers.display(),
                series.len()
            )))
        }
    };
    let raw = FundusImage::load(image)?;
    let q = quality_check(&raw, &cfg.preprocess);
    if !q.accepted {
        warn!("image looks blurry path={} laplacian_variance={:.3}", image.display(), q.laplacian_variance);
    }
    // The grade label is unknown here; it does not enter the forward pass.
    let sample = Sample::build(id.clone(), &raw, series, &metadata, 0, &cfg.preprocess, cfg.model.time_scale)?;
    let input = sample.input();
    let prediction = if cfg.bayesian {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(patient_stream(id));
        ck.model.mc_predict(&input, cfg.train.mc_samples, &mut rng)?
    } else {
        ck.model.predict_deterministic(&input)?
    };
    if let Some(path) = saliency {
        let map = ck.model.saliency(&input, SaliencyTarget::Risk)?;
        let peak = map.data().iter().copied().fold(0.0, f64::max);
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        let (h, w) = (map.shape()[0], map.shape()[1]);
        FundusImage::new(w, h, 1, map.data().iter().map(|v| v * scale).collect())?.save(path)?;
        info!("wrote saliency path={}", path.display());
    }
    let out = PredictOutput {
        patient_id: id.clone(),
        prediction,
    };
    let json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cv(args: &RunArgs, k: usize) -> CliResult<()> {
    let cfg = resolve_config(args.config.as_deref())?;
    let samples = load_samples(&cfg, &args.data, &args.out)?;
    let report = cross_validate(&cfg, &samples, k)?;
    write_json(&args.out.join("cv.json"), &report)?;
    for (name, ms) in &report.summary {
        info!("cv metric={name} mean={:.4} std={:.4}", ms.mean, ms.std);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationLine {
    variant: String,
    param_count: usize,
    fusion_input_dim: usize,
    epochs_run: usize,
    accuracy: f64,
    qwk: f64,
    auc_roc: Option<f64>,
    c_index: Option<f64>,
}

fn ablate_cmd(args: &RunArgs, variant: Option<AblationVariant>) -> CliResult<()> {
    let cfg = resolve_config(args.config.as_deref())?;
    let samples = load_samples(&cfg, &args.data, &args.out)?;
    let variants = match variant {
        Some(v) => vec![v],
        None => AblationVariant::ALL.to_vec(),
    };
    let mut lines = Vec::with_capacity(variants.len());
    for v in variants {
        let row = ablate(&cfg, &samples, v)?;
        info!(
            "ablation variant={v} params={} fusion_input={} accuracy={:.4}",
            row.param_count, row.fusion_input_dim, row.report.accuracy
        );
        write_json(&args.out.join(format!("ablation_{v}.json")), &row)?;
        lines.push(AblationLine {
            variant: v.to_string(),
            param_count: row.param_count,
            fusion_input_dim: row.fusion_input_dim,
            epochs_run: row.epochs_run,
            accuracy: row.report.accuracy,
            qwk: row.report.qwk,
            auc_roc: row.report.auc_roc,
            c_index: row.report.c_index,
        });
    }
    write_csv(&args.out.join("ablation.csv"), &lines)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { n, seed, out, config } => synth(n, seed, &out, config.as_deref()),
        Command::Preprocess { manifest, out, config } => preprocess(&manifest, &out, config.as_deref()),
        Command::Train(args) => train_cmd(&args),
        Command::Evaluate { predictions, out } => evaluate(&predictions, &out),
        Command::Predict {
            checkpoint,
            image,
            biomarkers,
            meta,
            patient,
            config,
            saliency,
        } => predict(
            &checkpoint,
            &image,
            &biomarkers,
            &meta,
            patient.as_deref(),
            config.as_deref(),
            saliency.as_deref(),
        ),
        Command::Cv { run, k } => cv(&run, k),
        Command::Ablate { run, variant } => ablate_cmd(&run, variant),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
