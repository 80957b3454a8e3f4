use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Sample;
use super::loss::{total_loss, total_loss_var, LossConfig};
use super::schedule::{PlateauController, PlateauEvent};
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::numerics::{adam_step, AdamState, DropoutMode, OptimConfig, Tape, Tensor};
use crate::preprocess::{augment, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the stochastic training passes.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,val_acc,lr` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub adam: AdamState,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Training order for one epoch: the training indices, topped up by drawing
/// with replacement inside each minority grade until all grades match the
/// largest one, then shuffled.
pub fn epoch_order<R: Rng + ?Sized>(samples: &[Sample], train: &[usize], balance: bool, rng: &mut R) -> Vec<usize> {
    let mut order = train.to_vec();
    if balance {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); crate::NUM_GRADES];
        for &i in train {
            groups[samples[i].grade].push(i);
        }
        let target = groups.iter().map(Vec::len).max().unwrap_or(0);
        for g in groups.iter().filter(|g| !g.is_empty()) {
            for _ in g.len()..target {
                order.push(g[rng.random_range(0..g.len())]);
            }
        }
    }
    order.shuffle(rng);
    order
}

/// Loss and accuracy of dropout-free predictions on `idx`.
pub fn evaluate_loss(model: &FusionModel, samples: &[Sample], idx: &[usize], loss: &LossConfig) -> Result<(f64, f64)> {
    let mut probs = Vec::with_capacity(idx.len());
    let mut risks = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    let mut truth_risk = Vec::with_capacity(idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &i in idx {
        let (p, r) = model.predict_once(&samples[i].input(), false, &mut rng)?;
        probs.push(p);
        risks.push(r);
        labels.push(samples[i].grade);
        truth_risk.push(samples[i].risk);
    }
    let l = total_loss(&probs, &labels, &risks, &truth_risk, loss)?;
    let correct = probs.iter().zip(&labels).filter(|(p, &y)| argmax(p) == y).count();
    Ok((l, correct as f64 / idx.len() as f64))
}

/// One optimiser step on a batch; returns the batch loss and correct count.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    model: &mut FusionModel,
    samples: &[Sample],
    batch: &[usize],
    loss: &LossConfig,
    optim: &OptimConfig,
    adam: &mut AdamState,
    lr: f64,
    aug: Option<&PreprocessConfig>,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let mut outputs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    let mut risks = Vec::with_capacity(batch.len());
    for &i in batch {
        let s = &samples[i];
        let input = match aug {
            Some(cfg) => s.input_with(&augment(&s.image, rng, cfg)),
            None => s.input(),
        };
        outputs.push(model.forward(&mut tape, &p, &input, DropoutMode::Stochastic, rng)?);
        labels.push(s.grade);
        risks.push(s.risk);
    }
    let l = total_loss_var(&mut tape, &outputs, &labels, &risks, loss)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    let correct = outputs
        .iter()
        .zip(&labels)
        .filter(|(o, &y)| argmax(tape.value(o.probs).data()) == y)
        .count();
    let grads = tape.backward(l)?;
    let g: Vec<Tensor> = model
        .params
        .ids()
        .map(|id| grads.get_or_zeros(p.var(id), model.params.get(id).shape()))
        .collect();
    adam_step(&mut model.params, &g, adam, optim, lr)?;
    Ok((value, correct))
}

/// Mini-batch Adam with validation-driven LR reduction and early stopping.
/// The parameters with the lowest validation loss are restored at the end.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut FusionModel,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    loss: &LossConfig,
    optim: &OptimConfig,
    pre: &PreprocessConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    optim.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::contract("training and validation sets must be non-empty"));
    }
    if let Some(&i) = train_idx.iter().chain(val_idx).find(|&&i| i >= samples.len()) {
        return Err(Error::contract(format!("sample index {i} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&model.params);
    let mut plateau = PlateauController::new(
        optim.learning_rate,
        cfg.lr_reduce_factor,
        cfg.lr_reduce_patience,
        cfg.early_stop_patience,
        cfg.min_delta,
    );
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let aug = cfg.augment.then_some(pre);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let decay = cfg
            .lr_decay_factor
            .map_or(1.0, |d| d.powf(epoch as f64 / cfg.epochs as f64));
        let lr = plateau.lr * decay;
        let order = epoch_order(samples, train_idx, cfg.balance_classes, &mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (l, c) = train_step(model, samples, batch, loss, optim, &mut adam, lr, aug, &mut rng).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {}, batch {b}: {m}", epoch + 1)),
                other => other,
            })?;
            loss_sum += l * batch.len() as f64;
            correct += c;
        }
        let (val_loss, val_acc) = evaluate_loss(model, samples, val_idx, loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {}", epoch + 1)));
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_loss,
            val_acc,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch={} train_loss={:.5} train_acc={:.3} val_loss={:.5} val_acc={:.3} lr={}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc,
            record.lr
        );
        epochs.push(record);
        match plateau.step(val_loss) {
            PlateauEvent::Improved => {
                best.copy_from(&model.params)?;
                best_epoch = epoch + 1;
            }
            PlateauEvent::Stop => {
                stop_reason = StopReason::EarlyStop;
                break;
            }
            PlateauEvent::Stale | PlateauEvent::Reduced(_) => {}
        }
    }
    model.params.copy_from(&best)?;
    Ok(TrainOutcome {
        history: TrainHistory {
            epochs,
            stop_reason,
            best_epoch,
            best_val_loss: plateau.best,
        },
        adam,
    })
}
