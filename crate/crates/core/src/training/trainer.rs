use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{in_batch_loss_with_ids, naive_batches, Adam, AdamConfig, Batch, BatchCache, FlushPolicy, TrainSample};
use crate::encoder::{ItemForward, ModelParams, ParamGrads, Real, UserForward, UserInput};
use crate::hash::mix_seed;
use crate::{CategoryId, Error, ItemId, Result};

/// How the shuffled sample stream is cut into batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Single-category batches through [`BatchCache`].
    #[default]
    InContext,
    /// Sequential mixed-category chunks.
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub batching: Batching,
    pub flush: FlushPolicy,
    /// Per-category queue bound, in batches.
    pub queue_cap_batches: usize,
    /// Treat in-batch negatives as a set of distinct items other than the
    /// row's positive.
    pub distinct_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 256,
            epochs: 3,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 7,
            batching: Batching::InContext,
            flush: FlushPolicy::Drop,
            queue_cap_batches: 64,
            distinct_negatives: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be a nonnegative number".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("train.beta1/beta2 must lie in [0, 1) and train.eps be positive".into()));
        }
        if self.queue_cap_batches == 0 {
            return Err(Error::Config("train.queue_cap_batches must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// One optimizer step's log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub category: Option<CategoryId>,
    pub batch_size: usize,
    pub wall_ms: f64,
}

/// Loss of one batch. Each sample's user vector is encoded at the sample's
/// own timestamp. With `distinct_negatives`, repeated in-batch items count
/// once and never as a negative of their own positive.
pub fn batch_loss<T: Real>(params: &ModelParams<T>, samples: &[TrainSample], distinct_negatives: bool) -> Result<f64> {
    let mut grads = params.zeros_like();
    batch_loss_and_grads(params, samples, distinct_negatives, &mut grads)
}

/// Loss of one batch; overwrites `grads` with its full parameter gradient.
pub fn batch_loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    samples: &[TrainSample],
    distinct_negatives: bool,
    grads: &mut ParamGrads<T>,
) -> Result<f64> {
    let dim = params.config.dim;
    let mut users = Vec::with_capacity(samples.len());
    let mut items = Vec::with_capacity(samples.len());
    let mut user_block = Vec::with_capacity(samples.len() * dim);
    let mut item_block = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        let u = UserForward::run(
            params,
            UserInput { profile: &s.profile_tokens, subseq: &s.subseq, now: s.timestamp },
        )?;
        let v = ItemForward::run(params, s.positive_item)?;
        user_block.extend_from_slice(u.output());
        item_block.extend_from_slice(&v.output);
        users.push(u);
        items.push(v);
    }
    let ids: Vec<ItemId> = samples.iter().map(|s| s.positive_item).collect();
    let out = in_batch_loss_with_ids(
        &user_block,
        &item_block,
        distinct_negatives.then_some(ids.as_slice()),
        dim,
        params.config.temperature,
    )?;
    grads.for_each_tensor_mut(|_, m| m.data.iter_mut().for_each(|v| *v = T::zero()));
    for (i, (u, v)) in users.iter().zip(&items).enumerate() {
        u.backward(params, &out.d_users[i * dim..(i + 1) * dim], grads);
        v.backward(params, &out.d_items[i * dim..(i + 1) * dim], grads);
    }
    Ok(out.loss)
}

/// Single-threaded, seeded trainer. On a non-finite loss the step is not
/// applied, so `params()` still holds the last good state.
pub struct Trainer {
    cfg: TrainConfig,
    params: ModelParams<f32>,
    grads: ParamGrads<f32>,
    adam: Adam<f32>,
    step: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: ModelParams<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(cfg.adam(), &params);
        let grads = params.zeros_like();
        Ok(Self { cfg, params, grads, adam, step: 0, epoch: 0 })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// The batches of epoch `epoch`, deterministic in `(seed, epoch)`.
    pub fn epoch_batches(cfg: &TrainConfig, samples: &[TrainSample], epoch: usize) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64)));
        let mut stream = order.into_iter().map(|i| samples[i].clone());
        let mut out = Vec::new();
        match cfg.batching {
            Batching::InContext => {
                let mut cache =
                    BatchCache::with_queue_cap(cfg.batch_size, cfg.flush, cfg.queue_cap_batches * cfg.batch_size);
                while let Some(b) = cache.next_batch(&mut stream) {
                    out.push(b);
                }
            }
            Batching::Naive => {
                out.extend(
                    naive_batches(stream, cfg.batch_size)
                        .filter(|b| !(b.flushed && cfg.flush == FlushPolicy::Drop)),
                );
            }
        }
        out.retain(|b| b.len() >= 2);
        out
    }

    /// One optimizer step on `batch`. Returns the pre-step loss.
    pub fn step(&mut self, batch: &[TrainSample]) -> Result<f64> {
        let loss = batch_loss_and_grads(&self.params, batch, self.cfg.distinct_negatives, &mut self.grads)
            .map_err(|e| match e {
                Error::Numeric { detail, .. } => Error::Numeric { step: self.step, detail },
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::Numeric { step: self.step, detail: format!("loss = {loss}") });
        }
        self.adam.step(&mut self.params, &self.grads);
        self.step += 1;
        Ok(loss)
    }

    /// Runs the next epoch, reporting every step to `on_step`.
    pub fn run_epoch(&mut self, samples: &[TrainSample], mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        let batches = Self::epoch_batches(&self.cfg, samples, self.epoch);
        for batch in batches {
            let start = Instant::now();
            let loss = self.step(&batch.samples)?;
            on_step(&StepMetrics {
                step: self.step,
                epoch: self.epoch,
                loss,
                category: batch.category,
                batch_size: batch.len(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs all remaining epochs.
    pub fn run(&mut self, samples: &[TrainSample], mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch(samples, &mut on_step)?;
        }
        Ok(())
    }
}
