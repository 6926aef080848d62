//! Joint training with Adam, validation-keyed early stopping, per-epoch
//! logging and a finite-difference gradient checker.

mod adam;
mod config;
mod gradcheck;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocabulary, Corpus, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::{encode_corpus, BatchLoss, EncodedRecord, Model, Objective};
use crate::scalar::Scalar;

pub use adam::Adam;
pub use config::TrainConfig;
pub use gradcheck::{gradient_check, GradCheckReport, GroupError};

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    #[serde(rename = "L_S")]
    pub sequence_loss: f64,
    #[serde(rename = "L_R")]
    pub rating_loss: f64,
    #[serde(rename = "lambda_S")]
    pub lambda_sequence: f64,
    #[serde(rename = "lambda_R")]
    pub lambda_rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a monitored loss; any non-decrease counts.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Joint loss over `records` at the current parameters; `None` when empty.
pub fn validate<T: Scalar>(model: &Model<T>, records: &[EncodedRecord], obj: &Objective) -> Result<Option<BatchLoss>> {
    if records.is_empty() {
        return Ok(None);
    }
    model.batch_loss(records, obj).map(Some)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

/// Parameters and history produced by [`fit`].
pub struct Fitted<T> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Whether `best_loss` is a validation loss (else a training loss).
    pub monitored_validation: bool,
}

/// Optimizes `model` on `train`, keeping the parameters of the epoch with the
/// lowest monitored loss (validation when available, else training).
pub fn fit<T: Scalar>(
    cfg: &TrainConfig,
    mut model: Model<T>,
    train: &[EncodedRecord],
    val: &[EncodedRecord],
    mut log_sink: Option<&mut dyn Write>,
) -> Result<Fitted<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::UndefinedInput("empty training set"));
    }
    let obj = cfg.objective();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut grads = model.zeros_like();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = model.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut dropout_stream = 0u64;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train[k].clone()));
            for t in grads.tensors_mut() {
                t.fill_zero();
            }
            grads.weights.sequence = T::zero();
            grads.weights.rating = T::zero();
            let dropout = (cfg.dropout > 0.0).then_some((cfg.seed, dropout_stream));
            dropout_stream += batch.len() as u64;
            let loss = model.batch_loss_backward(&batch, &obj, &mut grads, dropout)?;
            if !loss.joint.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("joint {} (L_S {}, L_R {})", loss.joint, loss.sequence, loss.rating),
                });
            }
            opt.step(&mut model, &grads, obj.form.trains_weights());
        }

        let train_eval = model.batch_loss(train, &obj)?;
        let val_eval = validate(&model, val, &obj)?;
        let entry = EpochLog {
            epoch,
            train_loss: train_eval.joint,
            val_loss: val_eval.map(|v| v.joint),
            sequence_loss: train_eval.sequence,
            rating_loss: train_eval.rating,
            lambda_sequence: model.weights.sequence.as_f64(),
            lambda_rating: model.weights.rating.as_f64(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            serde_json::to_writer(&mut *sink, &entry)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        log.push(entry);

        let monitored = val_eval.map_or(train_eval.joint, |v| v.joint);
        if !monitored.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                detail: "non-finite epoch evaluation".into(),
            });
        }
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => best_model = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, best_loss) = stopper.best().expect("at least one epoch");
    Ok(Fitted {
        model: best_model,
        log,
        best_epoch,
        best_loss,
        monitored_validation: !val.is_empty(),
    })
}

/// Builds the vocabulary, initializes a model and trains it on `split`.
pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    split: &DatasetSplit,
    log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::UndefinedInput("empty corpus"));
    }
    let vocab = build_vocabulary(&corpus.records, cfg.min_count);
    let encoded = encode_corpus(corpus, &vocab);
    let pick = |idx: &[usize]| -> Vec<EncodedRecord> { idx.iter().map(|&k| encoded[k].clone()).collect() };
    let (train_set, val_set) = (pick(&split.train), pick(&split.validation));
    let lm_cfg = cfg.lm_config(vocab.len());

    let (model, log, best_epoch, best_loss, monitored_validation) = if cfg.double_precision {
        let init = Model::<f64>::init(lm_cfg, corpus.users.len(), corpus.items.len(), cfg.seed)?;
        let f = fit(cfg, init, &train_set, &val_set, log_sink)?;
        (f.model.cast::<f32>(), f.log, f.best_epoch, f.best_loss, f.monitored_validation)
    } else {
        let init = Model::<f32>::init(lm_cfg, corpus.users.len(), corpus.items.len(), cfg.seed)?;
        let f = fit(cfg, init, &train_set, &val_set, log_sink)?;
        (f.model, f.log, f.best_epoch, f.best_loss, f.monitored_validation)
    };

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        vocab,
        users: corpus.users.clone(),
        items: corpus.items.clone(),
        model,
        best_val_loss: monitored_validation.then_some(best_loss),
        epoch: best_epoch,
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
    })
}
