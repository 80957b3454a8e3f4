//! Multi-task loss, the training loop, stratified splits, cross-validation and ablations.

mod config;
mod data;
mod loss;
mod pipeline;
mod schedule;
mod split;
mod trainer;

pub use config::TrainConfig;
pub use data::{samples_from_records, Sample};
pub use loss::{focal_loss, focal_loss_var, total_loss, total_loss_var, LossConfig, PROB_FLOOR};
pub use pipeline::{
    ablate, cross_validate, fit, init_model, patient_stream, predict, run_experiment, AblationRow, AblationVariant, CvReport,
    Experiment,
};
pub use schedule::{PlateauController, PlateauEvent};
pub use split::{stratified_kfold, stratified_split, Split};
pub use trainer::{
    epoch_order, evaluate_loss, train, train_step, EpochRecord, StopReason, TrainHistory, TrainOutcome,
};
