//! The training loop: batching with condition dropout, the unified loss,
//! decoupled-weight-decay Adam with warmup + cosine decay, EMA teacher
//! updates, logging, and checkpointing.
//!
//! Runs are fully deterministic for a fixed (seed, config, dataset): the
//! log byte stream and the final checkpoint are reproducible bit for bit.
//! Wall-time logging is off by default because it would break that.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::flow::ScheduleConfig;
use crate::losses::{build_unified_loss, prepare_targets, LossWeights, TrainBatch};
use crate::net::{
    save_checkpoint, EmaTeacher, IntervalVelocityNet, NetConfig, DEFAULT_EMA_BETA_MAX,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub ema_beta_max: f64,
    pub loss: LossWeights,
    pub schedule: ScheduleConfig,
    /// Record wall time per step in the log. Off by default: timing is
    /// nondeterministic and would break byte-identical logs.
    pub log_walltime: bool,
    /// Polyak-Ruppert iterate averaging over the trailing fraction of
    /// steps (0 disables it). The averaged parameters land in
    /// `TrainOutput::tail_averaged`; the checkpointed student is always
    /// the last iterate.
    pub tail_average_fraction: f64,
    #[serde(skip)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(skip)]
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr_peak: 1e-4,
            adam_beta1: 0.95,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-6,
            warmup_steps: 500,
            seed: 0,
            ema_beta_max: DEFAULT_EMA_BETA_MAX,
            loss: LossWeights::default(),
            schedule: ScheduleConfig::default(),
            log_walltime: false,
            tail_average_fraction: 0.0,
            checkpoint_path: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if self.lr_peak <= 0.0 {
            return Err(Error::InvalidArgument("lr_peak must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("adam betas must be in [0,1)".into()));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// One optimizer-step record. `ms` is 0 unless wall-time logging is on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_flow: f64,
    pub loss_sc: f64,
    pub loss_sg: f64,
    pub grad_norm: f64,
    pub ms: f64,
}

/// Append-only training log, one record per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "step,lr,loss_total,loss_flow,loss_sc,loss_sg,grad_norm,ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.lr, r.loss_total, r.loss_flow, r.loss_sc, r.loss_sg, r.grad_norm, r.ms
            ));
        }
        out
    }

    /// Mean of the last `window` values of a column, for trend checks.
    pub fn smoothed_flow_loss(&self, window: usize) -> f64 {
        let n = self.records.len();
        let take = window.min(n).max(1);
        self.records[n - take..].iter().map(|r| r.loss_flow).sum::<f64>() / take as f64
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then a half cosine
/// from `peak` down to 0 at `total` steps.
pub fn cosine_lr(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    let warmup = warmup.min(total);
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam first/second moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Decoupled-weight-decay Adam with bias correction. Rejects non-finite
/// gradients before touching the parameters.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument("adam_step shape mismatch".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument("non-finite gradient".into()));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        params[i] -= lr * weight_decay * params[i];
    }
    Ok(())
}

/// Output of a training run.
pub struct TrainOutput {
    pub net: IntervalVelocityNet,
    pub teacher: EmaTeacher,
    pub log: TrainLog,
    pub total_steps: usize,
    /// Uniform average of the parameters over the configured trailing
    /// window, when tail averaging was enabled.
    pub tail_averaged: Option<crate::net::ParamStore>,
}

/// Train on `(observation, chunk)` pairs (chunks already normalized).
///
/// Per step: sample a batch, apply condition dropout, partition into
/// sub-batches, compute the unified loss, backprop, Adam step, EMA update,
/// log. A non-finite loss aborts immediately with the pre-step parameters
/// written to the checkpoint path when one is configured.
pub fn train(
    pairs: &[(Vec<f64>, Vec<f64>)],
    net_config: &NetConfig,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("training dataset is empty".into()));
    }
    let mut net = IntervalVelocityNet::new(net_config.clone())?;
    let mut teacher = EmaTeacher::new(net.params(), config.ema_beta_max);

    let batches_per_epoch = (pairs.len() / config.batch_size).max(1);
    let total_steps = config.epochs * batches_per_epoch;
    let mut schedule = config.schedule.clone();
    schedule.total_steps = total_steps;
    schedule.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(net.params().len());
    let mut log = TrainLog::default();
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    let tail_from = if config.tail_average_fraction > 0.0 {
        let window =
            ((config.tail_average_fraction.min(1.0) * total_steps as f64).ceil() as usize).max(1);
        Some(total_steps - window.min(total_steps))
    } else {
        None
    };
    let mut tail_sum: Vec<f64> = Vec::new();
    let mut tail_count = 0usize;

    for _epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        for b in 0..batches_per_epoch {
            let clock = std::time::Instant::now();
            let lo = b * config.batch_size;
            let hi = (lo + config.batch_size).min(pairs.len());
            let batch_pairs: Vec<(Vec<f64>, Vec<f64>)> =
                indices[lo..hi].iter().map(|&i| pairs[i].clone()).collect();
            let batch = TrainBatch::build(&mut rng, &batch_pairs, &config.loss, &schedule, step);

            let teacher_field = teacher.field(&net);
            let prepared = prepare_targets(&teacher_field, &batch)?;
            let mut tape = Tape::new();
            let pv = net.register_params(&mut tape, net.params(), true);
            let terms =
                build_unified_loss(&net, &teacher_field, &mut tape, &pv, &batch, &config.loss, &prepared)?;
            let values = terms.values(&tape);
            if !values.total.is_finite() {
                // Parameters have not been touched this step; they are the
                // last good state.
                if let Some(path) = &config.checkpoint_path {
                    save_checkpoint(&net, &teacher, path)?;
                }
                if let Some(path) = &config.log_path {
                    std::fs::write(path, log.to_csv())?;
                }
                return Err(Error::NumericAbort { step });
            }
            let grads = tape.backward(terms.total)?;
            let block_grads = net.gradients_from(&grads, &pv);
            drop(tape);
            let flat: Vec<f64> = block_grads.into_iter().flatten().collect();
            let grad_norm = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
            let lr = cosine_lr(step, config.warmup_steps, total_steps, config.lr_peak);
            adam_step(
                net.params_mut().flat_mut(),
                &flat,
                &mut adam,
                lr,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_eps,
                config.weight_decay,
            )
            .map_err(|_| Error::NumericAbort { step })?;
            teacher.update(net.params(), step as u64)?;
            if let Some(from) = tail_from {
                if step >= from {
                    if tail_sum.is_empty() {
                        tail_sum = vec![0.0; net.params().len()];
                    }
                    for (s, p) in tail_sum.iter_mut().zip(net.params().flat().iter()) {
                        *s += p;
                    }
                    tail_count += 1;
                }
            }

            let ms = if config.log_walltime {
                clock.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            log.records.push(TrainRecord {
                step,
                lr,
                loss_total: values.total,
                loss_flow: values.flow,
                loss_sc: values.consistency,
                loss_sg: values.guidance,
                grad_norm,
                ms,
            });
            step += 1;
        }
    }

    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(&net, &teacher, path)?;
    }
    if let Some(path) = &config.log_path {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, log.to_csv())?;
    }
    let tail_averaged = if tail_count > 0 {
        for s in tail_sum.iter_mut() {
            *s /= tail_count as f64;
        }
        Some(crate::net::ParamStore::from_flat(net.params().blocks().to_vec(), tail_sum)?)
    } else {
        None
    };
    Ok(TrainOutput { net, teacher, log, total_steps, tail_averaged })
}
