//! Conditional flow matching: regress the student field onto the teacher
//! velocity `σ̇(t)·ε` at path points `x1 + σ(t)·ε`, `t ~ U[0, 1]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{write_csv, Cell};
use crate::rng::{tags, Stream};
use crate::student_field::{save_checkpoint, AdamConfig, FieldArchitecture, FieldParams, DEFAULT_TIME_FEATURES};
use crate::{Error, NoiseSchedule, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine-anneal the step size to this value over the run; constant when unset.
    pub final_learning_rate: Option<f64>,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub dataset_ref: String,
    pub log_every: usize,
    pub hidden_dims: Vec<usize>,
    pub time_features: usize,
    /// Written at the end of every epoch when set.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 256,
            learning_rate: 1e-3,
            final_learning_rate: None,
            seed: 0,
            schedule: NoiseSchedule::default(),
            dataset_ref: String::new(),
            log_every: 100,
            hidden_dims: vec![64, 64],
            time_features: DEFAULT_TIME_FEATURES,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config("final_learning_rate must be nonnegative".into()));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Step size for `step` out of `total` steps.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if total > 1 => {
                let frac = step as f64 / (total - 1) as f64;
                end + 0.5 * (self.learning_rate - end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            _ => self.learning_rate,
        }
    }
}

/// Path time and noise for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraw {
    pub t: f64,
    pub eps: Vec<f64>,
}

impl PathDraw {
    pub fn sample(dim: usize, rng: &mut Stream) -> Self {
        let t = rng.uniform_closed();
        PathDraw {
            t,
            eps: rng.normal_vec(dim),
        }
    }
}

/// Batch loss `(1/B) Σ ‖v_θ(x_t, t) − σ̇(t)ε‖²` for explicit draws; the
/// matching gradient is accumulated into `params`.
pub fn cfm_loss_on_draws<S: AsRef<[f64]>>(
    params: &mut FieldParams,
    batch: &[S],
    draws: &[PathDraw],
    sched: &NoiseSchedule,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} path draws",
            batch.len(),
            draws.len()
        )));
    }
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x1, draw) in batch.iter().zip(draws) {
        let x1 = x1.as_ref();
        let sigma = sched.sigma(draw.t)?;
        let sigma_dot = sched.sigma_dot(draw.t)?;
        let x_t: Vec<f64> = x1.iter().zip(&draw.eps).map(|(a, e)| a + sigma * e).collect();
        let target: Vec<f64> = draw.eps.iter().map(|e| sigma_dot * e).collect();
        let loss = params.backward_scaled(&x_t, draw.t, &target, weight)?;
        if !loss.is_finite() {
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            return Err(Error::Numeric(format!(
                "loss {loss} at t = {}, sigma(t) = {sigma}, |x1| = {}, |eps| = {}",
                draw.t,
                norm(x1),
                norm(&draw.eps)
            )));
        }
        total += loss;
    }
    Ok(total * weight)
}

/// Draw `t ~ U[0, 1]` and `ε ~ N(0, I)` per sample from `rng`, then evaluate
/// [`cfm_loss_on_draws`].
pub fn cfm_batch_loss<S: AsRef<[f64]>>(
    params: &mut FieldParams,
    batch: &[S],
    sched: &NoiseSchedule,
    rng: &mut Stream,
) -> Result<f64> {
    let dim = params.architecture().input_dim;
    let draws: Vec<PathDraw> = (0..batch.len()).map(|_| PathDraw::sample(dim, rng)).collect();
    cfm_loss_on_draws(params, batch, &draws, sched)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FieldParams,
    pub history: Vec<LossRecord>,
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Train a freshly initialized field on `dataset`.
pub fn train(config: &TrainConfig, dataset: &[Vec<f64>]) -> Result<TrainOutcome> {
    let dim = dataset
        .first()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?
        .len();
    let arch = FieldArchitecture::new(dim, config.hidden_dims.clone(), config.time_features)?;
    let params = FieldParams::init(arch, config.seed)?;
    train_from(params, config, dataset)
}

/// Continue training `params`; runs `epochs × ⌈|D|/B⌉` Adam steps.
pub fn train_from(mut params: FieldParams, config: &TrainConfig, dataset: &[Vec<f64>]) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let dim = params.architecture().input_dim;
    if let Some(i) = dataset.iter().position(|x| x.len() != dim) {
        return Err(Error::Shape(format!(
            "sample {i} has {} entries, field expects {dim}",
            dataset[i].len()
        )));
    }

    let mut adam = config.adam();
    let total_steps = config.epochs * steps_per_epoch(dataset.len(), config.batch_size);
    let mut shuffle_rng = Stream::new(config.seed, tags::SHUFFLE);
    let mut path_rng = Stream::new(config.seed, tags::PATH);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(total_steps);
    let mut step = 0;

    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| dataset[i].as_slice()).collect();
            let loss = cfm_batch_loss(&mut params, &batch, &config.schedule, &mut path_rng)?;
            adam.lr = config.learning_rate_at(step, total_steps);
            params.adam_step(&adam);
            history.push(LossRecord { step, epoch, loss });
            if step % config.log_every == 0 {
                log::info!("step {step} epoch {epoch} loss {loss:.6}");
            }
            step += 1;
        }
        if let Some(path) = &config.checkpoint_path {
            save_checkpoint(&params, path)?;
        }
    }
    if config.epochs == 0 {
        if let Some(path) = &config.checkpoint_path {
            save_checkpoint(&params, path)?;
        }
    }
    Ok(TrainOutcome { params, history })
}

/// Moving average over a trailing window.
pub fn smoothed(history: &[LossRecord], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(history.len());
    let mut acc = 0.0;
    for (i, r) in history.iter().enumerate() {
        acc += r.loss;
        if i >= window {
            acc -= history[i - window].loss;
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// CSV with columns `step, epoch, loss`.
pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = history
        .iter()
        .map(|r| vec![Cell::Int(r.step as i64), Cell::Int(r.epoch as i64), Cell::Float(r.loss)])
        .collect();
    write_csv(path, &["step", "epoch", "loss"], &rows)
}
