use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{answer_targets, Example, QaModel};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Label written into every log record.
    pub regime: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            seed: 0,
            regime: "GT".into(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub regime: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    /// Epoch whose parameters were kept (1-based; 0 if no epoch improved).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Seed for a labelled sub-stream of a run, e.g. one example in one epoch.
pub fn derive_seed(seed: u64, label: &str, epoch: Option<usize>) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    if let Some(e) = epoch {
        h.update([0xff]);
        h.update((e as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Mean loss and accuracy over `examples`. Examples whose answer lies
/// outside the answer vocabulary count as misses and are left out of the loss.
pub fn evaluate(model: &QaModel<f32>, examples: &[Example<'_>], batch_size: usize) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let dists = model.distributions(examples, batch_size)?;
    let (mut loss, mut scored, mut correct) = (0.0, 0usize, 0usize);
    for (e, d) in examples.iter().zip(&dists) {
        if let Some(a) = e.answer {
            loss -= d.probabilities[a].max(f64::MIN_POSITIVE).ln();
            scored += 1;
            if d.argmax() == a {
                correct += 1;
            }
        }
    }
    Ok((loss / scored.max(1) as f64, correct as f64 / examples.len() as f64))
}

/// Mini-batch training with Adam and cross-entropy.
///
/// `epoch_examples(e)` yields the training examples of epoch `e` (1-based),
/// which lets curricula substitute graphs per epoch. After every epoch the
/// model is scored on `val`; the parameters of the best epoch are restored
/// at the end.
pub fn train<'a, F>(model: &mut QaModel<f32>, mut epoch_examples: F, val: &[Example<'_>], opts: &TrainOptions) -> Result<TrainReport>
where
    F: FnMut(usize) -> Result<Vec<Example<'a>>>,
{
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(opts.optimizer.clone(), &model.store);
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, _)> = None;
    for epoch in 1..=opts.epochs {
        let examples: Vec<Example<'a>> = epoch_examples(epoch)?.into_iter().filter(|e| e.answer.is_some()).collect();
        if examples.is_empty() {
            return Err(Error::Empty("no trainable examples".into()));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "shuffle", Some(epoch))));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch: Vec<&Example<'a>> = chunk.iter().map(|&i| &examples[i]).collect();
            let targets = answer_targets(&batch).expect("filtered to answered examples");
            let mut tape = Tape::new();
            tape.enable_dropout(model.config.dropout, derive_seed(opts.seed, &format!("dropout/{step}"), Some(epoch)));
            let fwd = match model.forward(&mut tape, &batch) {
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, step }),
                other => other?,
            };
            let logits = tape.value(fwd.logits);
            for (r, &t) in targets.iter().enumerate() {
                let row = logits.row(r);
                let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                if arg == t {
                    correct += 1;
                }
            }
            let loss = tape.cross_entropy(fwd.logits, targets);
            let value = tape.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            loss_sum += value * batch.len() as f64;
            let mut grads = tape.backward(loss);
            adam.step(&mut model.store, &mut grads);
            if !model.store.all_finite() {
                return Err(Error::Diverged { epoch, step });
            }
        }
        let n = examples.len() as f64;
        log.push(LogRecord {
            epoch,
            split: "train".into(),
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            regime: opts.regime.clone(),
        });

        let (val_loss, val_acc) = evaluate(model, val, opts.batch_size)?;
        log.push(LogRecord {
            epoch,
            split: "val".into(),
            loss: val_loss,
            accuracy: val_acc,
            regime: opts.regime.clone(),
        });
        log::info!(
            "[{}] epoch {epoch}: train loss {:.4} acc {:.4}, val loss {val_loss:.4} acc {val_acc:.4}",
            opts.regime,
            loss_sum / n,
            correct as f64 / n
        );
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.store.clone()));
        }
    }
    let (best_epoch, best_val_accuracy) = match best {
        Some((e, acc, store)) => {
            model.store = store;
            (e, acc)
        }
        None => (0, 0.0),
    };
    Ok(TrainReport {
        log,
        best_epoch,
        best_val_accuracy,
    })
}
