//! RMSprop training of the localizer on in-memory samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph};
use crate::error::{shape_mismatch, Error, Result};
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::loss::LossConfig;
use crate::metrics;
use crate::model::Model;
use crate::nn::{Mode, ParamStore};
use crate::tensor::Tensor;

/// Epoch losses above this halt training.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the manifest held out for validation by the CLI.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            rho: 0.99,
            eps: 1e-8,
            batch_size: 8,
            epochs: 50,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("train.rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("train.eps must be positive, got {}", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "train.val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// `acc ← ρ·acc + (1−ρ)·g²; p ← p − lr·g / (√acc + eps)` per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    acc: BTreeMap<String, Tensor>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            acc: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lr, cfg.rho, cfg.eps)
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.acc.get(name)
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a non-finite gradient leaves `store` untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = store.get(name)?;
            if p.shape() != g.shape() {
                return Err(shape_mismatch("rmsprop", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        for (name, g) in grads {
            let acc = self
                .acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let p = store.get_mut(name)?;
            for ((p, a), g) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *a = self.rho * *a + (1.0 - self.rho) * g * g;
                *p -= self.lr * g / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A preprocessed image `[3, S, S]` with its pixel-space landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub landmarks: LandmarkSet,
}

/// Stacks samples into `[B, 3, H, W]` images and `[B, 12, 2]` normalized targets.
pub fn stack_batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let shape = first.image.shape().to_vec();
    let mut images = Vec::with_capacity(samples.len() * first.image.len());
    let mut targets = Vec::with_capacity(samples.len() * 2 * NUM_LANDMARKS);
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(shape_mismatch("batch", &shape, s.image.shape()));
        }
        images.extend_from_slice(s.image.data());
        targets.extend(s.landmarks.normalized().iter().flatten());
    }
    let mut ishape = vec![samples.len()];
    ishape.extend(shape);
    Ok((
        Tensor::new(ishape, images)?,
        Tensor::new(vec![samples.len(), NUM_LANDMARKS, 2], targets)?,
    ))
}

/// Loss, per-parameter gradients and batchnorm statistics of one batch.
pub struct StepResult {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub stats: Vec<(String, BatchStats)>,
}

pub fn batch_gradients(model: &Model, store: &ParamStore, loss: &LossConfig, images: &Tensor, targets: &Tensor) -> Result<StepResult> {
    let mut g = Graph::new();
    let mut sess = model.session(&mut g, store, Mode::Train);
    let x = sess.graph.constant(images.clone());
    let gt = sess.graph.constant(targets.clone());
    let out = model.forward(&mut sess, x)?;
    let l = model.loss(&mut sess, &out, gt, loss)?;
    let stats = sess.take_stats();
    let bound = sess.bound().clone();
    let mut grads = g.backward(l)?;
    let mut named = BTreeMap::new();
    for (name, v) in bound {
        let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape().to_vec()));
        named.insert(name, t);
    }
    Ok(StepResult {
        loss: g.value(l).item()?,
        grads: named,
        stats,
    })
}

/// Predicted landmark sets in each sample's pixel frame.
pub fn predict_samples(model: &Model, store: &ParamStore, samples: &[Sample], batch_size: usize) -> Result<Vec<LandmarkSet>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = stack_batch(&refs)?;
        let pred = model.predict(store, &images)?;
        for (s, c) in chunk.iter().zip(pred.coords.data().chunks(2 * NUM_LANDMARKS)) {
            out.push(LandmarkSet::from_normalized(c, s.landmarks.width, s.landmarks.height)?);
        }
    }
    Ok(out)
}

/// Mean NME of evaluation-mode predictions; `None` without scorable samples.
pub fn mean_nme(model: &Model, store: &ParamStore, samples: &[Sample], batch_size: usize) -> Result<Option<f64>> {
    let preds = predict_samples(model, store, samples, batch_size)?;
    let nmes: Vec<f64> = samples
        .iter()
        .zip(&preds)
        .filter_map(|(s, p)| metrics::nme(&s.landmarks, p))
        .collect();
    Ok((!nmes.is_empty()).then(|| nmes.iter().sum::<f64>() / nmes.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_nme: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch that completed without divergence.
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    /// Why training stopped early, if it did.
    pub halted: Option<Error>,
}

/// CSV with header `epoch,loss,val_nme`; missing validation is left empty.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,val_nme\n");
    for e in log {
        let v = e.val_nme.map(|v| format!("{v:.9}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.9},{}", e.epoch, e.loss, v);
    }
    s
}

/// Batch order for `epoch`; a pure function of `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

pub struct Trainer<'a> {
    pub model: &'a Model,
    pub loss: &'a LossConfig,
    pub cfg: &'a TrainConfig,
    pub seed: u64,
}

impl Trainer<'_> {
    /// Trains from `store`, calling `on_epoch` after every epoch.
    pub fn run(
        &self,
        mut store: ParamStore,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochLog, &ParamStore),
    ) -> Result<TrainOutcome> {
        self.cfg.validate()?;
        self.loss.validate()?;
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        store.check_against(&self.model.specs())?;
        let mut opt = RmsProp::from_config(self.cfg);
        let mut log = Vec::with_capacity(self.cfg.epochs);
        for epoch in 1..=self.cfg.epochs {
            let snapshot = store.clone();
            match self.epoch(&mut store, &mut opt, train, epoch) {
                Ok(loss) if loss.is_finite() && loss <= DIVERGENCE_LIMIT => {
                    let val_nme = if val.is_empty() {
                        None
                    } else {
                        mean_nme(self.model, &store, val, self.cfg.batch_size)?
                    };
                    let entry = EpochLog { epoch, loss, val_nme };
                    info!(
                        "epoch {epoch}: loss {loss:.6}{}",
                        val_nme.map(|v| format!(", val NME {v:.5}")).unwrap_or_default()
                    );
                    on_epoch(&entry, &store);
                    log.push(entry);
                }
                Ok(loss) => {
                    warn!("epoch {epoch}: loss {loss} diverged, keeping previous parameters");
                    return Ok(TrainOutcome {
                        store: snapshot,
                        log,
                        halted: Some(Error::Diverged { epoch, loss }),
                    });
                }
                Err(e @ Error::NonFiniteGradient(_)) => {
                    warn!("epoch {epoch}: {e}, keeping previous parameters");
                    return Ok(TrainOutcome {
                        store: snapshot,
                        log,
                        halted: Some(e),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(TrainOutcome { store, log, halted: None })
    }

    fn epoch(&self, store: &mut ParamStore, opt: &mut RmsProp, train: &[Sample], epoch: usize) -> Result<f64> {
        let order = epoch_order(self.seed, epoch, train.len());
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (images, targets) = stack_batch(&refs)?;
            let step = batch_gradients(self.model, store, self.loss, &images, &targets)?;
            debug!("epoch {epoch} batch {b}: loss {:.6}", step.loss);
            if !step.loss.is_finite() {
                return Ok(step.loss);
            }
            opt.step(store, &step.grads)?;
            store.update_running_stats(&step.stats)?;
            total += step.loss * chunk.len() as f64;
        }
        Ok(total / train.len() as f64)
    }
}
