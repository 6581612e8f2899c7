//! The shared mini-batch training loop: seeded splits and shuffles, Adam on
//! a maskable subset of parameter tensors, early stopping with best-weight
//! restore, and loss-curve bookkeeping.
//!
//! The loop is model-agnostic: each trainer supplies a closure that turns
//! (current tensors, batch indices, batch counter) into a loss value and
//! per-tensor gradients, plus a validation-metric closure. Everything the
//! loop itself does is a deterministic function of the config seed.

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{adam_step, derive_seed, AdamConfig, AdamState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named randomness streams hanging off the config seed. Each consumer gets
/// its own stream so adding one never shifts the draws of another.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_DIRS: u64 = 3;
pub(crate) const STREAM_EXTEND: u64 = 4;

/// Fraction of training items held out for early stopping.
pub(crate) const VAL_FRACTION: f64 = 0.1;

/// What a training run recorded, beyond the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation MSE per epoch (empty when the dataset was too small to
    /// hold out a validation split).
    pub val_curve: Vec<f64>,
    pub epochs_run: usize,
    /// Total optimizer batches consumed (also the projection-stream cursor).
    pub batches: u64,
    /// Final optimizer state over the tensors that were trainable.
    pub optimizer: AdamState,
}

impl TrainLog {
    pub(crate) fn empty() -> Self {
        TrainLog {
            loss_curve: Vec::new(),
            val_curve: Vec::new(),
            epochs_run: 0,
            batches: 0,
            optimizer: AdamState::new(&[]),
        }
    }

    /// Appends a follow-up phase's history (used by transfer learning).
    pub(crate) fn extend(mut self, later: TrainLog) -> TrainLog {
        self.loss_curve.extend(later.loss_curve);
        self.val_curve.extend(later.val_curve);
        self.epochs_run += later.epochs_run;
        self.batches += later.batches;
        self.optimizer = later.optimizer;
        self
    }
}

/// Deterministically splits item indices 0..n into (train, validation).
pub(crate) fn split_train_val(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT));
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * VAL_FRACTION).floor() as usize;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

pub(crate) struct LoopSpec<'a> {
    pub cfg: &'a TrainConfig,
    /// One entry per parameter tensor, `false` to freeze it.
    pub trainable: Vec<bool>,
    /// Diagnostic names parallel to the tensors.
    pub names: Vec<String>,
    /// Offset for the global batch counter (continues across phases).
    pub start_batch: u64,
}

impl LoopSpec<'_> {
    /// Runs mini-batch Adam over `train_idx` for up to `cfg.epochs` epochs,
    /// early-stopping on the validation metric (or, without a validation
    /// split, on the epoch training loss) with `cfg.patience`, and returns
    /// the best-seen tensors.
    ///
    /// `batch_grads(tensors, batch, batch_no)` must return the batch loss
    /// and one gradient per tensor (an empty vec means "no gradient", which
    /// the loop treats as zero). `val_metric` is only called when
    /// `use_val` is true.
    pub(crate) fn run(
        &self,
        mut tensors: Vec<Vec<f64>>,
        train_idx: &[usize],
        use_val: bool,
        mut batch_grads: impl FnMut(&[Vec<f64>], &[usize], u64) -> Result<(f64, Vec<Vec<f64>>)>,
        mut val_metric: impl FnMut(&[Vec<f64>]) -> Result<f64>,
    ) -> Result<(Vec<Vec<f64>>, TrainLog)> {
        assert_eq!(self.trainable.len(), tensors.len());
        assert_eq!(self.names.len(), tensors.len());
        if train_idx.is_empty() {
            return Err(Error::validation("no training items"));
        }

        let sub: Vec<usize> = (0..tensors.len()).filter(|&i| self.trainable[i]).collect();
        let sub_lens: Vec<usize> = sub.iter().map(|&i| tensors[i].len()).collect();
        let sub_names: Vec<&str> = sub.iter().map(|&i| self.names[i].as_str()).collect();
        let mut state = AdamState::new(&sub_lens);
        let adam = AdamConfig::with_lr(self.cfg.learning_rate);

        let shuffle_root = derive_seed(self.cfg.seed, STREAM_SHUFFLE);
        let mut loss_curve = Vec::new();
        let mut val_curve = Vec::new();
        let mut batch_no = self.start_batch;

        let mut best_metric = f64::INFINITY;
        let mut best_tensors = tensors.clone();
        let mut best_epoch = 0usize;
        let mut epochs_run = 0usize;

        for epoch in 0..self.cfg.epochs {
            let mut order = train_idx.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_root, epoch as u64));
            order.shuffle(&mut rng);

            let mut epoch_loss = 0.0;
            let mut n_batches = 0usize;
            for batch in order.chunks(self.cfg.batch_size) {
                let (loss, mut grads) = batch_grads(&tensors, batch, batch_no)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at batch {batch_no}")));
                }
                let sub_params: Vec<Vec<f64>> = sub.iter().map(|&i| tensors[i].clone()).collect();
                let sub_grads: Vec<Vec<f64>> = sub
                    .iter()
                    .map(|&i| {
                        let g = std::mem::take(&mut grads[i]);
                        if g.is_empty() {
                            vec![0.0; tensors[i].len()]
                        } else {
                            g
                        }
                    })
                    .collect();
                let (new_params, new_state) = adam_step(&sub_params, &sub_grads, &state, &sub_names, &adam)?;
                for (slot, p) in sub.iter().zip(new_params) {
                    tensors[*slot] = p;
                }
                state = new_state;
                epoch_loss += loss;
                n_batches += 1;
                batch_no += 1;
            }
            let epoch_loss = epoch_loss / n_batches as f64;
            loss_curve.push(epoch_loss);
            epochs_run = epoch + 1;

            let metric = if use_val {
                let m = val_metric(&tensors)?;
                val_curve.push(m);
                m
            } else {
                epoch_loss
            };
            if metric < best_metric {
                best_metric = metric;
                best_tensors = tensors.clone();
                best_epoch = epoch;
            } else if epoch - best_epoch >= self.cfg.patience {
                log::info!(
                    "early stop at epoch {epoch}: no improvement for {} epochs (best {:.6})",
                    self.cfg.patience,
                    best_metric
                );
                break;
            }
        }

        Ok((
            best_tensors,
            TrainLog {
                loss_curve,
                val_curve,
                epochs_run,
                batches: batch_no - self.start_batch,
                optimizer: state,
            },
        ))
    }
}
