//! Mini-batch training loop with per-epoch logging and resumable state.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::network::{sigmoid, FreqNorm, PelNetwork};
use super::optim::Adam;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::metrics;
use crate::synth::{mix_seed, ForgerySample};

pub const LOG_HEADER: &str = "epoch,loss,train_acc,val_acc,val_auc";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_auc: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.epoch, self.loss, self.train_acc, self.val_acc, self.val_auc
        )
    }
}

pub struct Trainer {
    pub net: PelNetwork,
    pub opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(net: PelNetwork) -> Self {
        let opt = Adam::new(&net.store, net.config.lr, net.config.weight_decay);
        Trainer { net, opt, epoch: 0 }
    }

    /// Resumes from a checkpoint holding a training state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt.to_network()?;
        let state = ckpt
            .state
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state to resume from".into()))?;
        let mut opt = Adam::new(&net.store, net.config.lr, net.config.weight_decay);
        opt.t = state.adam_t;
        opt.m = state.m.clone();
        opt.v = state.v.clone();
        Ok(Trainer {
            net,
            opt,
            epoch: state.epoch as usize,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_network(&self.net, Some((&self.opt, self.epoch as u64)))
    }

    /// Fits the frequency-band statistics on the training images.
    pub fn fit_freq_norm(&mut self, train: &[ForgerySample]) -> Result<()> {
        if self.net.config.use_freq {
            self.net.freq_norm = FreqNorm::fit(train.iter().map(|s| &s.image))?;
        }
        Ok(())
    }

    /// One optimizer step on a batch; returns the loss and the logits.
    pub fn step(&mut self, images: &[&RgbImage], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = self.net.prepare(images)?;
        let mut g = Graph::new();
        let fwd = self.net.forward(&mut g, &batch)?;
        let loss = g.bce_with_logits(fwd.logits, labels)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence(format!(
                "loss became {value} at epoch {} step {}",
                self.epoch + 1,
                self.opt.t + 1
            )));
        }
        let grads = g.backward(loss)?;
        self.net.store.zero_grads();
        grads.accumulate_into(&mut self.net.store);
        self.opt.step(&mut self.net.store)?;
        Ok((value, g.value(fwd.logits).data().to_vec()))
    }

    /// Shuffled pass over `train` (order seeded by config seed and epoch),
    /// then validation metrics.
    pub fn run_epoch(&mut self, train: &[ForgerySample], val: &[ForgerySample]) -> Result<EpochLog> {
        let cfg = &self.net.config;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1000 + self.epoch as u64));
        order.shuffle(&mut rng);
        let batch_size = cfg.batch_size;
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut scores = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        for chunk in order.chunks(batch_size) {
            let images: Vec<&RgbImage> = chunk.iter().map(|&i| &train[i].image).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| train[i].label.as_f64()).collect();
            let (loss, logits) = self.step(&images, &y)?;
            loss_sum += loss;
            batches += 1;
            scores.extend(logits.into_iter().map(sigmoid));
            labels.extend(chunk.iter().map(|&i| train[i].label.as_u8()));
        }
        self.epoch += 1;
        let (val_acc, val_auc) = self.evaluate(val)?;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: loss_sum / batches.max(1) as f64,
            train_acc: metrics::compute_acc(&scores, &labels)?,
            val_acc,
            val_auc,
        })
    }

    /// Accuracy and AUC on a labelled set.
    pub fn evaluate(&self, samples: &[ForgerySample]) -> Result<(f64, f64)> {
        let images: Vec<&RgbImage> = samples.iter().map(|s| &s.image).collect();
        let labels: Vec<u8> = samples.iter().map(|s| s.label.as_u8()).collect();
        let scores = self.net.predict(&images)?;
        Ok((metrics::compute_acc(&scores, &labels)?, metrics::compute_auc(&scores, &labels)?))
    }

    /// Runs epochs until `config.epochs` have completed, calling `on_epoch`
    /// after each one.
    pub fn fit(
        &mut self,
        train: &[ForgerySample],
        val: &[ForgerySample],
        mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.net.config.epochs {
            let log = self.run_epoch(train, val)?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Fits frequency statistics and trains `net` for its configured epochs.
pub fn train(net: PelNetwork, train: &[ForgerySample], val: &[ForgerySample]) -> Result<(PelNetwork, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(net);
    trainer.fit_freq_norm(train)?;
    let logs = trainer.fit(train, val, |_, _| Ok(()))?;
    Ok((trainer.net, logs))
}
