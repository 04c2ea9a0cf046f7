//! Point-sampled MSE training with momentum SGD and an exponential
//! per-epoch learning-rate decay.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::metrics::psnr_from_mse;
use crate::model::{Graph, Model};
use crate::projector::ProjectionSet;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::volume::{sample_field, PointBatch, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Volumes per optimisation step.
    pub batch_size: usize,
    pub points_per_volume: usize,
    pub lr0: f64,
    pub momentum: f64,
    /// Learning-rate factor reached after `epochs` epochs.
    pub lr_decay_total: f64,
    pub seed: u64,
    /// Call [`TrainObserver::checkpoint`] every this many epochs (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 4,
            points_per_volume: 10_000,
            lr0: 0.01,
            momentum: 0.98,
            lr_decay_total: 1e-3,
            seed: crate::DEFAULT_SEED,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("train config", reason));
        if self.batch_size == 0 || self.points_per_volume == 0 {
            return bad(format!(
                "batch_size and points_per_volume must be >= 1, got {} and {}",
                self.batch_size, self.points_per_volume
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay_total > 0.0 && self.lr_decay_total <= 1.0) {
            return bad(format!("lr_decay_total must be in (0, 1], got {}", self.lr_decay_total));
        }
        Ok(())
    }
}

/// `lr0 * decay_total^(e / epochs)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs == 0 {
        return cfg.lr0;
    }
    cfg.lr0 * cfg.lr_decay_total.powf(epoch as f64 / cfg.epochs as f64)
}

/// One training scan: simulated projections and the volume they came from.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub projections: ProjectionSet,
    pub volume: Volume,
}

/// `n` points uniform over the volume's box, with their true values.
pub fn sample_points<R: Rng + ?Sized>(vol: &Volume, n: usize, rng: &mut R) -> PointBatch {
    let (lo, hi) = vol.grid().bounds();
    let points: Vec<Vec3> = (0..n).map(|_| [0, 1, 2].map(|a| rng.gen_range(lo[a]..hi[a]))).collect();
    sample_field(vol, &PointBatch::new(points))
}

/// Seeded variant of [`sample_points`].
pub fn sample_points_seeded(vol: &Volume, n: usize, seed: u64) -> PointBatch {
    sample_points(vol, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mean squared error of two value lists.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape("mse", format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Differentiable MSE of a `[P, 1]` (or `[P]`) prediction against targets.
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, truth: &[f64]) -> Result<Var> {
    let n = tape.value(pred).numel();
    if n != truth.len() || n == 0 {
        return Err(Error::shape("mse_loss", format!("{n} predictions for {} targets", truth.len())));
    }
    let t = tape.constant(Tensor::new(tape.shape(pred).to_vec(), truth.iter().map(|&v| T::of(v)).collect())?);
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// PSNR implied by the mean point MSE (unit data range).
    pub psnr: f64,
}

/// Hooks for logging and checkpointing; every method defaults to a no-op.
pub trait TrainObserver<T: Real> {
    fn step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    /// Called after epoch `epoch` (1-based count of finished epochs).
    fn checkpoint(&mut self, _epochs_done: usize, _model: &Model<T>) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl<T: Real> TrainObserver<T> for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

/// One optimisation step on a batch; returns the batch loss.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    batch: &[(&TrainSample, PointBatch)],
    lr: f64,
    momentum: f64,
    step: usize,
) -> Result<f64> {
    let mut g = Graph::trainable(model.params());
    let mut losses = Vec::with_capacity(batch.len());
    for (sample, pts) in batch {
        let pred = model.forward(&mut g, &sample.projections, &pts.points)?;
        let loss = mse_loss(&mut g.tape, pred, pts.values())?;
        let value = g.tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, sample: sample.id.clone(), loss: value });
        }
        losses.push(loss);
    }
    let total = match losses.as_slice() {
        [single] => *single,
        _ => {
            let cat = g.tape.concat(&losses, 0)?;
            g.tape.mean(cat)
        }
    };
    let value = g.tape.value(total).data()[0].as_f64();
    g.tape.backward(total)?;
    let (tape, bound) = g.into_parts();
    model.params_mut().sgd_step(&tape, &bound, lr, momentum)?;
    Ok(value)
}

/// Trains `model` on `dataset`. Each epoch visits the samples in a seeded
/// random order, `batch_size` at a time, drawing fresh points per volume at
/// every step.
pub fn train<T: Real>(
    dataset: &[TrainSample],
    mut model: Model<T>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for ids in order.chunks(cfg.batch_size) {
            let batch: Vec<(&TrainSample, PointBatch)> = ids
                .iter()
                .map(|&i| (&dataset[i], sample_points(&dataset[i].volume, cfg.points_per_volume, &mut rng)))
                .collect();
            let loss = train_step(&mut model, &batch, lr, cfg.momentum, step)?;
            let log = StepLog { step, epoch, lr, loss };
            observer.step(&log)?;
            steps.push(log);
            epoch_loss += loss;
            epoch_steps += 1;
            step += 1;
        }
        let mean_loss = epoch_loss / epoch_steps as f64;
        let log = EpochLog { epoch, mean_loss, psnr: psnr_from_mse(mean_loss) };
        observer.epoch(&log)?;
        epochs.push(log);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            observer.checkpoint(epoch + 1, &model)?;
        }
    }
    Ok(TrainOutcome { model, steps, epochs })
}
