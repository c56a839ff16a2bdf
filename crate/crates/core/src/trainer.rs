//! SGD with momentum, coupled weight decay, gradient averaging and a step
//! learning-rate schedule.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bins::Binning;
use crate::data::{augment_sample, label_map, network_input, Sample};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::softmax_nll;
use crate::net::{backward, forward, init_params, Checkpoint, Gradients, NetArch, NetParams};
use crate::tensor::{Real, Tensor4};

/// Where augmentation happens during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Off,
    /// A fresh random augmentation of every drawn sample.
    Online,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::Off => "off",
            AugmentMode::Online => "online",
        }
    }
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(AugmentMode::Off),
            "online" => Ok(AugmentMode::Online),
            other => Err(Error::invalid(format!(
                "unknown augment mode `{other}` (expected off or online)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Forward/backward passes averaged into one update.
    pub accum_steps: usize,
    /// Total forward/backward passes.
    pub total_iters: usize,
    pub fixed_iters: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
    pub binning: Binning,
    pub arch: NetArch,
    pub augment: AugmentMode,
    /// Passes per TrainLog entry.
    pub log_every: usize,
    /// Passes between checkpoints; 0 disables them. Must be a multiple of
    /// `accum_steps`.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for `bins` bins over `[d_min, d_max]`.
    pub fn new(binning: Binning) -> Self {
        let arch = NetArch::new(binning.num_bins());
        TrainConfig {
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0004,
            accum_steps: 8,
            total_iters: 10_000,
            fixed_iters: 6_000,
            decay_every: 2_000,
            decay_factor: 0.1,
            seed: 0,
            binning,
            arch,
            augment: AugmentMode::Off,
            log_every: 20,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.decay_factor > 0.0) || self.decay_factor > 1.0 {
            return bad(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.accum_steps == 0 || self.decay_every == 0 || self.log_every == 0 {
            return bad("accum_steps, decay_every and log_every must be >= 1".into());
        }
        if self.fixed_iters > self.total_iters {
            return bad(format!(
                "fixed_iters {} exceeds total_iters {}",
                self.fixed_iters, self.total_iters
            ));
        }
        if self.checkpoint_every % self.accum_steps != 0 {
            return bad(format!(
                "checkpoint_every {} must be a multiple of accum_steps {}",
                self.checkpoint_every, self.accum_steps
            ));
        }
        if self.arch.num_bins != self.binning.num_bins() {
            return bad(format!(
                "architecture has {} bins, binning has {}",
                self.arch.num_bins,
                self.binning.num_bins()
            ));
        }
        self.arch.validate()
    }
}

/// Learning rate for pass `iter`: `base_lr` during the first `fixed_iters`
/// passes, then multiplied by `decay_factor` once immediately and again
/// every `decay_every` passes.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter < cfg.fixed_iters {
        return cfg.base_lr;
    }
    let steps = 1 + (iter - cfg.fixed_iters) / cfg.decay_every;
    cfg.base_lr * cfg.decay_factor.powi(steps as i32)
}

/// Per-parameter momentum buffers, parallel to [`NetParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub velocity: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &NetParams<T>) -> Self {
        OptState {
            velocity: Gradients::zeros_like(params).tensors,
        }
    }
}

/// `v = m v + (g + wd * theta)`, then `theta -= lr * v`. BN scale and shift
/// skip the decay term. A non-finite gradient aborts before any update.
pub fn sgd_step<T: Real>(
    params: &mut NetParams<T>,
    grads: &Gradients<T>,
    state: &mut OptState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.tensors().len();
    if grads.tensors.len() != n || state.velocity.len() != n {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} gradients and {} velocities for {n} parameters",
                grads.tensors.len(),
                state.velocity.len()
            ),
        ));
    }
    for (i, t) in params.tensors().iter().enumerate() {
        match (&grads.tensors[i], &state.velocity[i]) {
            (Some(g), Some(v)) => {
                if g.shape() != t.value.shape() || v.shape() != t.value.shape() {
                    return Err(Error::shape(
                        "sgd_step",
                        format!("`{}`: gradient {} for parameter {}", t.name, g.shape(), t.value.shape()),
                    ));
                }
                if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        op: "sgd_step gradient",
                        index: j,
                    });
                }
            }
            (None, None) if !t.kind.learnable() => {}
            _ => {
                return Err(Error::invalid(format!(
                    "gradient/velocity presence mismatch for `{}`",
                    t.name
                )))
            }
        }
    }
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    let kinds: Vec<bool> = params.tensors().iter().map(|t| t.kind.decayed()).collect();
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        let (Some(g), Some(v)) = (&grads.tensors[i], &mut state.velocity[i]) else {
            continue;
        };
        let decay = if kinds[i] { wd } else { T::zero() };
        let theta = t.value.data_mut();
        for ((th, vv), &gg) in theta.iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = m * *vv + (gg + decay * *th);
            *th -= lr * *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    /// Pass index of the last pass in the window.
    pub iter: usize,
    pub lr: f64,
    /// Mean loss over the window.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    /// `(epoch, shuffle seed)` for every epoch started.
    pub epoch_seeds: Vec<(usize, u64)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,lr,loss\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{:e},{:.6}", e.iter, e.lr, e.loss);
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,shuffle_seed\n");
        for (e, seed) in &self.epoch_seeds {
            let _ = writeln!(s, "{e},{seed}");
        }
        s
    }
}

const SHUFFLE_STREAM: u64 = 1 << 40;
const AUGMENT_STREAM: u64 = 2 << 40;

/// Seed for a derived random stream, so every epoch and every pass has its
/// own generator and no state has to be carried between them.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derived_seed(seed, SHUFFLE_STREAM + epoch as u64)
}

/// Sample order of `epoch`: a seeded shuffle of `0..n`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
}

/// A training run that can be paused at update boundaries, checkpointed and
/// resumed bit-exactly.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a [Sample],
    params: NetParams<f32>,
    state: OptState<f32>,
    iter: usize,
    log: TrainLog,
    window_sum: f64,
    window_count: usize,
    order: Vec<usize>,
    order_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a [Sample], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let params = init_params::<f32>(cfg.seed, cfg.arch)?;
        let state = OptState::new(&params);
        Ok(Trainer {
            cfg,
            data,
            params,
            state,
            iter: 0,
            log: TrainLog::default(),
            window_sum: 0.0,
            window_count: 0,
            order: Vec::new(),
            order_epoch: usize::MAX,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(data: &'a [Sample], cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(data, cfg)?;
        if *ck.params.arch() != t.cfg.arch || ck.binning != t.cfg.binning {
            return Err(Error::invalid(
                "checkpoint architecture or binning differs from the training config",
            ));
        }
        let meta = |k: &str| -> Result<&str> {
            ck.meta
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks training state `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            let v = meta(k)?;
            v.parse()
                .map_err(|_| Error::invalid(format!("checkpoint `{k}` is not an integer: `{v}`")))
        };
        if num("seed")? != t.cfg.seed {
            return Err(Error::invalid("checkpoint seed differs from the training config"));
        }
        t.iter = num("iter")? as usize;
        if t.iter % t.cfg.accum_steps != 0 || t.iter > t.cfg.total_iters {
            return Err(Error::invalid(format!(
                "checkpoint iteration {} is not an update boundary of this config",
                t.iter
            )));
        }
        t.window_sum = f64::from_bits(num("window_sum_bits")?);
        t.window_count = num("window_count")? as usize;
        t.params = ck.params.clone();
        for (i, p) in t.params.tensors().iter().enumerate() {
            if let Some(v) = &mut t.state.velocity[i] {
                let saved = ck
                    .extra_tensor(&format!("velocity:{}", p.name))
                    .ok_or_else(|| Error::invalid(format!("checkpoint lacks velocity of `{}`", p.name)))?;
                if saved.shape() != v.shape() {
                    return Err(Error::invalid(format!("velocity of `{}` has the wrong shape", p.name)));
                }
                *v = saved.clone();
            }
        }
        Ok(t)
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn params(&self) -> &NetParams<f32> {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Parameters, velocities and loop position.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.params.clone(), self.cfg.binning.clone())?;
        ck.meta.insert("iter".into(), self.iter.to_string());
        ck.meta.insert("seed".into(), self.cfg.seed.to_string());
        ck.meta
            .insert("window_sum_bits".into(), self.window_sum.to_bits().to_string());
        ck.meta
            .insert("window_count".into(), self.window_count.to_string());
        for (p, v) in self.params.tensors().iter().zip(&self.state.velocity) {
            if let Some(v) = v {
                ck.extra.push((format!("velocity:{}", p.name), v.clone()));
            }
        }
        Ok(ck)
    }

    fn sample_for(&mut self, iter: usize) -> usize {
        let n = self.data.len();
        let epoch = iter / n;
        if epoch != self.order_epoch {
            self.order = epoch_order(self.cfg.seed, epoch, n);
            self.order_epoch = epoch;
            if iter % n == 0 {
                self.log
                    .epoch_seeds
                    .push((epoch, epoch_seed(self.cfg.seed, epoch)));
            }
        }
        self.order[iter % n]
    }

    /// One pass: returns the loss and the gradients of one sample.
    fn pass(&mut self, iter: usize) -> Result<(f64, Gradients<f32>)> {
        let idx = self.sample_for(iter);
        let augmented;
        let sample = match self.cfg.augment {
            AugmentMode::Off => &self.data[idx],
            AugmentMode::Online => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derived_seed(self.cfg.seed, AUGMENT_STREAM + iter as u64));
                augmented = augment_sample(&self.data[idx], &mut rng)?.0;
                &augmented
            }
        };
        let x = network_input::<f32>(&[sample])?;
        let labels = label_map(&[sample], &self.cfg.binning)?;
        let (scores, cache) = forward(&mut self.params, &x, Mode::Train)?;
        if labels.valid_count() == 0 {
            return Ok((0.0, Gradients::zeros_like(&self.params)));
        }
        let (loss, grad) = softmax_nll(&scores, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter,
                reason: format!("loss {loss} on sample {idx}"),
            });
        }
        Ok((loss, backward(&self.params, &cache, &grad)?))
    }

    /// Runs passes until `until` (clamped to `total_iters`), calling
    /// `on_checkpoint` at the configured cadence.
    pub fn run_until(
        &mut self,
        until: usize,
        mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<()> {
        let until = until.min(self.cfg.total_iters);
        while self.iter < until {
            let start = self.iter;
            let end = (start + self.cfg.accum_steps).min(self.cfg.total_iters);
            let mut acc = Gradients::zeros_like(&self.params);
            for it in start..end {
                let (loss, g) = self.pass(it)?;
                acc.add_assign(&g)?;
                self.window_sum += loss;
                self.window_count += 1;
                if (it + 1) % self.cfg.log_every == 0 {
                    self.log.entries.push(LogEntry {
                        iter: it,
                        lr: lr_at(it, &self.cfg),
                        loss: self.window_sum / self.window_count as f64,
                    });
                    self.window_sum = 0.0;
                    self.window_count = 0;
                }
            }
            acc.scale(1.0 / (end - start) as f32);
            let lr = lr_at(end - 1, &self.cfg);
            sgd_step(
                &mut self.params,
                &acc,
                &mut self.state,
                lr,
                self.cfg.momentum,
                self.cfg.weight_decay,
            )
            .map_err(|e| Error::Diverged {
                iter: end - 1,
                reason: e.to_string(),
            })?;
            if let Some(j) = self
                .params
                .tensors()
                .iter()
                .position(|t| t.value.data().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Diverged {
                    iter: end - 1,
                    reason: format!("parameter `{}` became non-finite", self.params.tensors()[j].name),
                });
            }
            self.iter = end;
            if self.cfg.checkpoint_every > 0 && self.iter % self.cfg.checkpoint_every == 0 {
                on_checkpoint(&self.checkpoint()?)?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> (NetParams<f32>, TrainLog) {
        (self.params, self.log)
    }
}

/// Trains from scratch for `cfg.total_iters` passes.
pub fn train(data: &[Sample], cfg: &TrainConfig) -> Result<(NetParams<f32>, TrainLog)> {
    let mut t = Trainer::new(data, cfg.clone())?;
    t.run_until(cfg.total_iters, |_| Ok(()))?;
    Ok(t.finish())
}
