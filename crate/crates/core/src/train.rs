//! Seeded training step.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::augment::{sr_augment, SrConfig};
use crate::autodiff::Tape;
use crate::data::TrialSet;
use crate::error::{cfg_err, Error, Result};
use crate::model::{CsanetModel, ForwardCtx, ModelConfig};
use crate::optim::AdamState;
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub shuffle: StreamRng,
    pub augment: StreamRng,
    pub dropout: StreamRng,
}

impl TrainStreams {
    pub fn new(seed: u64) -> Self {
        TrainStreams {
            shuffle: rng::stream(seed, rng::SHUFFLE),
            augment: rng::stream(seed, rng::AUGMENT),
            dropout: rng::stream(seed, rng::DROPOUT),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over every trial seen, synthetic ones included.
    pub loss: f64,
    /// Training-mode accuracy over the same trials.
    pub acc: f64,
    pub steps: usize,
    /// Largest per-step batch after augmentation.
    pub effective_batch: usize,
}

/// Model, optimizer and random streams of one training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: CsanetModel<T>,
    pub optimizer: AdamState<T>,
    pub streams: TrainStreams,
    pub batch_size: usize,
    epoch: usize,
}

/// Splits `order` into batches of `batch_size`; a trailing single trial is
/// merged into the previous batch (batch norm needs two samples).
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

impl<T: Scalar> Trainer<T> {
    /// Initializes the model from the `"init"` stream of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64, lr: f64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(cfg_err!("batch size must be positive"));
        }
        let model = CsanetModel::new(cfg, &mut rng::stream(seed, rng::INIT))?;
        Ok(Self::from_model(model, seed, lr, batch_size))
    }

    pub fn from_model(model: CsanetModel<T>, seed: u64, lr: f64, batch_size: usize) -> Self {
        Trainer {
            model,
            optimizer: AdamState::new(T::from_f64_lossy(lr)),
            streams: TrainStreams::new(seed),
            batch_size,
            epoch: 0,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn sr_config(&self) -> SrConfig {
        let c = self.model.config();
        SrConfig { segments: c.sr_segments, enabled: c.sr_enabled }
    }

    /// One optimizer step on `batch`, augmented when enabled. Returns
    /// `(summed loss, correct, trials)` for the augmented batch.
    pub fn step(&mut self, batch: &TrialSet) -> Result<(f64, usize, usize)> {
        let sr = self.sr_config();
        let batch = sr_augment(batch, &sr, &mut self.streams.augment)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        let x = batch.batch_tensor::<T>(&idx)?;
        let labels = batch.labels();

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mut ctx = ForwardCtx::train(&mut self.streams.dropout);
        let logits = self.model.forward(&mut tape, xv, &mut ctx)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let loss_value = tape.value(loss).data()[0].to_f64_lossy();
        if !loss_value.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "non-finite loss at epoch {} step {}",
                self.epoch + 1,
                self.optimizer.steps() + 1
            )));
        }
        let correct = tape.value(logits).argmax_rows().iter().zip(&labels).filter(|(p, t)| p == t).count();
        let grads = tape.backward(loss)?;
        self.model.params_mut().zero_grad();
        grads.accumulate_into(self.model.params_mut())?;
        self.optimizer.step(self.model.params_mut())?;
        self.model.commit(ctx);
        Ok((loss_value * labels.len() as f64, correct, labels.len()))
    }

    /// One pass over `set` in a freshly shuffled order.
    pub fn train_epoch(&mut self, set: &TrialSet) -> Result<EpochStats> {
        if set.is_empty() {
            return Err(Error::Data(alloc::string::String::from("empty training set")));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut self.streams.shuffle);
        let mut loss = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        let mut effective = 0;
        let plan = batches(&order, self.batch_size);
        for b in &plan {
            let (l, c, n) = self.step(&set.subset(b))?;
            loss += l;
            correct += c;
            seen += n;
            effective = effective.max(n);
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: loss / seen as f64,
            acc: correct as f64 / seen as f64,
            steps: plan.len(),
            effective_batch: effective,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_merges_trailing_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], alloc::vec![4, 5, 6, 7, 8]);
        assert_eq!(batches(&order[..8], 4).len(), 2);
        assert_eq!(batches(&order[..1], 4), alloc::vec![alloc::vec![0]]);
    }
}
