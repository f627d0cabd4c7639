use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::optim::Adam;
use super::{derive_seed, truncate_sentence, TrainConfig};
use crate::corpus::{encode_bio, AnnotatedSentence};
use crate::error::{Error, Result};
use crate::model::{Mode, Tagger};

/// One row of the convergence series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest dev F1 (the earliest on ties);
    /// the initial model when no epoch ran.
    pub best: Tagger,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_dev(&self) -> Option<&EvalReport> {
        self.best_epoch.map(|e| &self.history[e - 1].dev)
    }
}

struct Example {
    tokens: Vec<String>,
    gold: Vec<usize>,
}

/// Mini-batch Adam on the mean CRF negative log-likelihood, with dev
/// evaluation after every epoch. Per-sentence gradients are computed in
/// parallel and summed in batch order, so results depend only on the seed.
pub fn train(
    initial: &Tagger,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(initial, train_set, dev_set, cfg, |_| Ok(()))
}

/// As [`train`], calling `observe` after each epoch.
pub fn train_with_observer(
    initial: &Tagger,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs > 0 && (train_set.is_empty() || dev_set.is_empty()) {
        return Err(Error::InvalidInput(
            "training needs non-empty train and dev sets".into(),
        ));
    }
    let max_len = initial.config.max_len;
    let examples: Vec<Example> = train_set
        .iter()
        .map(|s| {
            let s = truncate_sentence(s, max_len);
            Example {
                gold: encode_bio(&s).indices(),
                tokens: s.tokens,
            }
        })
        .collect();
    let lr = cfg.effective_learning_rate(initial.encoder.kind);
    let mut tagger = initial.clone();
    let mut adam = Adam::new(&tagger.params, lr);
    let mut best = initial.clone();
    let mut best_epoch = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let shuffle_seed = derive_seed(cfg.seed, "shuffle");
    let dropout_seed = derive_seed(cfg.seed, "dropout");

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            shuffle_seed.wrapping_add(epoch as u64),
        ));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, _)>> = batch
                .par_iter()
                .map(|&i| {
                    let mode = Mode::Training {
                        dropout_seed: dropout_seed
                            ^ ((epoch as u64) << 40)
                            ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    };
                    let ex = &examples[i];
                    tagger.loss_and_grad(&ex.tokens, &ex.gold, mode)
                })
                .collect();
            let mut grad = tagger.params.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                grad.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grad.scale(1.0 / batch.len() as f64);
            tagger.mask_frozen(&mut grad);
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grad.l2_norm();
                if norm > max_norm {
                    grad.scale(max_norm / norm);
                }
            }
            adam.update(&mut tagger.params, &grad);
        }
        let mut dev = evaluate(&tagger, dev_set)?;
        dev.epoch = Some(epoch);
        if cfg.log_timing {
            dev.seconds = Some(started.elapsed().as_secs_f64());
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            dev,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev p {:.4} r {:.4} f1 {:.4}",
            record.train_loss,
            record.dev.precision,
            record.dev.recall,
            record.dev.f1
        );
        if record.dev.f1 > best_f1 {
            best_f1 = record.dev.f1;
            best = tagger.clone();
            best_epoch = Some(epoch);
        }
        observe(&record)?;
        history.push(record);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

pub const CONVERGENCE_HEADER: &str = "epoch,train_loss,dev_precision,dev_recall,dev_f1,seconds";

/// One CSV row; `seconds` is left empty unless timing was recorded.
pub fn convergence_row(r: &EpochRecord) -> String {
    let seconds = r.dev.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        r.epoch, r.train_loss, r.dev.precision, r.dev.recall, r.dev.f1, seconds
    )
}

pub fn write_convergence<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "{CONVERGENCE_HEADER}")?;
    for r in history {
        writeln!(w, "{}", convergence_row(r))?;
    }
    Ok(())
}
