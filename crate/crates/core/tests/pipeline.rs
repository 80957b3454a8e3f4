use retinafuse::eval::build_report;
use retinafuse::io::{
    load_checkpoint, load_dataset, read_predictions, save_checkpoint, write_cohort, write_evaluation,
    write_predictions, Checkpoint, RunConfig, MANIFEST_FILE, REPORT_FILE,
};
use retinafuse::synth::gen_cohort;
use retinafuse::training::{predict, run_experiment, samples_from_records};

fn quick_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.cohort.n = 40;
    cfg.cohort.priors = [0.2; 5];
    cfg.train.epochs = 3;
    cfg.train.mc_samples = 4;
    cfg
}

#[test]
fn disk_round_trip_matches_in_memory_samples() {
    let cfg = quick_config();
    let records = gen_cohort(&cfg.cohort).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_cohort(dir.path(), &records).unwrap();
    let loaded = load_dataset(&dir.path().join(MANIFEST_FILE), &cfg.preprocess, cfg.model.time_scale).unwrap();
    let direct = samples_from_records(&records, &cfg.preprocess, cfg.model.time_scale).unwrap();
    assert_eq!(loaded.samples.len(), direct.len());
    assert_eq!(loaded.rejected(), 0);
    for (a, b) in loaded.samples.iter().zip(&direct) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.grade, b.grade);
        assert_eq!(a.meta, b.meta);
        // PNG quantises pixels to 8 bits.
        let gap = a
            .image
            .pixels()
            .iter()
            .zip(b.image.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 0.05, "{} differs by {gap}", a.id);
    }
}

#[test]
fn train_save_reload_and_report() {
    let cfg = quick_config();
    let records = gen_cohort(&cfg.cohort).unwrap();
    let samples = samples_from_records(&records, &cfg.preprocess, cfg.model.time_scale).unwrap();
    let exp = run_experiment(&cfg, &samples).unwrap();

    let h = &exp.outcome.history;
    assert!(!h.epochs.is_empty() && h.epochs.len() <= cfg.train.epochs);
    assert!(h.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert!((1..=h.epochs.len()).contains(&h.best_epoch));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tprs");
    save_checkpoint(
        &path,
        &Checkpoint {
            model: exp.model.clone(),
            adam: Some(exp.outcome.adam.clone()),
            rng: None,
            best_val_loss: h.best_val_loss,
        },
    )
    .unwrap();
    let back = load_checkpoint(&path, Some(&cfg.model)).unwrap();
    assert_eq!(back.adam.unwrap().step_count, exp.outcome.adam.step_count);
    let again = predict(&back.model, &samples, &exp.split.test, Some(cfg.train.mc_samples), cfg.seed).unwrap();
    assert_eq!(again, exp.predictions);

    let csv = dir.path().join("predictions.csv");
    write_predictions(&csv, &exp.predictions).unwrap();
    let read = read_predictions(&csv).unwrap();
    assert_eq!(build_report(&read).unwrap(), exp.report);

    write_evaluation(dir.path(), &exp.report).unwrap();
    for f in [REPORT_FILE, "roc.csv", "pr.csv", "dca.csv", "confusion.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(exp.report.n, exp.split.test.len());
}
