use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, cross_entropy, MetricsReport};
use super::{one_cycle, Adam, TrainConfig};
use crate::dataset::{augment, collate, Segment, Target};
use crate::error::{Error, Result};
use crate::model::H2Model;
use crate::tensor::Tape;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngStream {
    Init = 0,
    Shuffle = 1,
    Augment = 2,
    Dropout = 3,
    Split = 4,
}

pub fn rng_for(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Batch size used for evaluation; fixed so results never depend on the
/// training batch size.
pub const EVAL_BATCH: usize = 32;

/// Eval-mode metrics of `model` on `segments[indices]`. Batches are evaluated
/// in parallel; the result does not depend on the thread count.
pub fn evaluate(model: &H2Model, segments: &[Segment], indices: &[usize], target: Target) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("evaluation split is empty".into()));
    }
    let classes = model.config().num_classes;
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_BATCH).collect();
    let rows: Vec<Vec<Vec<f64>>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = collate(chunk.iter().map(|&i| &segments[i]))?;
            let logits = model.predict(&batch)?;
            Ok(logits.data().chunks(classes).map(<[f64]>::to_vec).collect())
        })
        .collect::<Result<_>>()?;
    let logits: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let truth: Vec<usize> = indices.iter().map(|&i| segments[i].label(target)).collect();
    let predicted: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    let mut report = MetricsReport::from_predictions(&predicted, &truth, classes)?;
    let loss = logits.iter().zip(&truth).map(|(r, &t)| cross_entropy(r, t)).sum::<f64>() / truth.len() as f64;
    report.loss = Some(loss);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss in training mode.
    pub train_loss: f64,
    /// Running accuracy of the training-mode predictions.
    pub train_batch_accuracy: f64,
    /// Eval-mode accuracy on the train split, when tracked.
    pub train_accuracy: Option<f64>,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub improved: bool,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,train_batch_accuracy,train_accuracy,test_loss,test_accuracy,test_macro_f1,lr,improved";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.epoch,
            self.train_loss,
            self.train_batch_accuracy,
            self.train_accuracy.map_or(String::new(), |a| format!("{a:.17e}")),
            self.test_loss,
            self.test_accuracy,
            self.test_macro_f1,
            self.lr,
            self.improved as u8
        )
    }
}

/// The epoch history as CSV text.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(EpochRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    TargetReached,
    /// Training diverged; the returned model is the last good checkpoint.
    NonFinite(String),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the best test macro-F1 (or the initial model if training
    /// diverged during the first epoch).
    pub best: H2Model,
    /// 1-based epoch of `best`; 0 if no epoch completed.
    pub best_epoch: usize,
    /// Test metrics of `best`, if any epoch completed.
    pub best_metrics: Option<MetricsReport>,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    pub steps_per_epoch: usize,
    pub steps_taken: usize,
}

/// Patience counter on a score that must strictly improve.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    /// Records one epoch's score; returns `(improved, should_stop)`.
    pub fn update(&mut self, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Splits a shuffled order into batches of `batch_size`. A trailing batch of
/// one sample is dropped because batch-norm cannot train on it.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order.chunks(batch_size).filter(|c| c.len() >= 2).collect()
}

/// Trains `model` with Adam under the one-cycle schedule, evaluating the test
/// split after every epoch and keeping the best macro-F1 model. `on_epoch` is
/// called after each epoch (for logging).
pub fn train(
    mut model: H2Model,
    segments: &[Segment],
    train_idx: &[usize],
    test_idx: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.len() < 2 {
        return Err(Error::InvalidInput(format!("train split has {} segments, need at least 2", train_idx.len())));
    }
    if test_idx.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let classes = model.config().num_classes;
    for &i in train_idx.iter().chain(test_idx) {
        let seg = segments
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("segment index {i} out of range")))?;
        let label = seg.label(cfg.target);
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
    }

    let steps_per_epoch = batches(train_idx, cfg.batch_size).len();
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut shuffle_rng = rng_for(cfg.seed, RngStream::Shuffle);
    let mut augment_rng = rng_for(cfg.seed, RngStream::Augment);
    let mut dropout_rng = rng_for(cfg.seed, RngStream::Dropout);
    let mut adam = Adam::with(model.store(), cfg.beta2, cfg.eps);
    let track_train = cfg.track_train_accuracy || cfg.stop_at_train_accuracy.is_some();

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_metrics: Option<MetricsReport> = None;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut step = 0;
    let mut order = train_idx.to_vec();
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for chunk in batches(&order, cfg.batch_size) {
            let (step_lr, beta1) = one_cycle(step, total_steps, cfg)?;
            lr = step_lr;
            let batch = match &cfg.augment {
                Some(aug) => {
                    let augmented: Vec<Segment> =
                        chunk.iter().map(|&i| augment(&segments[i], aug, &mut augment_rng)).collect();
                    collate(&augmented)?
                }
                None => collate(chunk.iter().map(|&i| &segments[i]))?,
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| segments[i].label(cfg.target)).collect();

            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, true, &mut dropout_rng)?;
            let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                stop = StopReason::NonFinite(format!("loss {loss_value} at epoch {epoch}, step {step}"));
                break 'epochs;
            }
            model.store_mut().zero_grads();
            tape.backward_into(loss, model.store_mut())?;
            match adam.step(model.store_mut(), lr, beta1) {
                Ok(()) => {}
                Err(Error::NonFinite(msg)) => {
                    stop = StopReason::NonFinite(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            let logits = tape.value(out.logits).data();
            correct += logits
                .chunks(classes)
                .zip(&labels)
                .filter(|(r, &l)| argmax(r) == l)
                .count();
            loss_sum += loss_value * labels.len() as f64;
            seen += labels.len();
            step += 1;
        }

        let test = evaluate(&model, segments, test_idx, cfg.target)?;
        let train_accuracy = if track_train {
            Some(evaluate(&model, segments, train_idx, cfg.target)?.accuracy)
        } else {
            None
        };
        let (improved, patience_spent) = stopper.update(test.macro_f1);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_batch_accuracy: correct as f64 / seen as f64,
            train_accuracy,
            test_loss: test.loss.unwrap_or(f64::NAN),
            test_accuracy: test.accuracy,
            test_macro_f1: test.macro_f1,
            lr,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_metrics = Some(test);
        }
        if let (Some(goal), Some(acc)) = (cfg.stop_at_train_accuracy, train_accuracy) {
            if acc >= goal {
                stop = StopReason::TargetReached;
                break;
            }
        }
        if patience_spent {
            if epoch < cfg.epochs {
                stop = StopReason::EarlyStopped;
            }
            break;
        }
    }

    Ok(TrainOutcome { best, best_epoch, best_metrics, history, stop, steps_per_epoch, steps_taken: step })
}
