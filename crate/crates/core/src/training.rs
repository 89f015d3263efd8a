//! Masked loss, the RAdam + Lookahead optimizer, learning-rate scheduling
//! and the truncated-BPTT training loop.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_windows, SequenceData, Standardizer, WindowPlan};
use crate::error::{Error, Result};
use crate::inference::pooled_rmse;
use crate::models::{receptive_field, Arch, ForwardOpts, HiddenState, Model, ParamStore};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub window_len: usize,
    /// Window batches per epoch; by default an epoch draws about as many
    /// samples as the training data holds.
    pub batches_per_epoch: Option<usize>,
    /// `None` runs the learning-rate finder.
    pub lr_max: Option<f64>,
    pub lr_min: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub plateau_patience: usize,
    /// Global gradient norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub teacher_forcing: bool,
    /// Masked leading steps of GRU windows; default `min(2^depth − 1,
    /// chunk_len / 2)`.
    pub warmup_mask_n: Option<usize>,
    pub valid_fraction: f64,
    pub finder_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 16,
            chunk_len: 512,
            window_len: 4096,
            batches_per_epoch: None,
            lr_max: None,
            lr_min: 1e-6,
            lookahead_k: 6,
            lookahead_alpha: 0.5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            plateau_patience: 3,
            grad_clip: 1.0,
            seed: 0,
            teacher_forcing: false,
            warmup_mask_n: None,
            valid_fraction: 0.2,
            finder_batches: 100,
        }
    }
}

impl TrainConfig {
    /// Collects every invalid field instead of stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                p.push(msg.to_string());
            }
        };
        check(self.max_epochs >= 1, "max_epochs must be >= 1");
        check(self.batch_size >= 1, "batch_size must be >= 1");
        check(self.chunk_len >= 1, "chunk_len must be >= 1");
        check(
            self.chunk_len >= 1 && self.window_len >= self.chunk_len && self.window_len % self.chunk_len == 0,
            "window_len must be a positive multiple of chunk_len",
        );
        check(self.batches_per_epoch != Some(0), "batches_per_epoch must be >= 1");
        check(
            self.lr_max.is_none_or(|lr| lr > 0.0 && lr.is_finite()),
            "lr_max must be positive",
        );
        check(self.lr_min >= 0.0 && self.lr_min.is_finite(), "lr_min must be >= 0");
        check(self.lr_max.is_none_or(|lr| lr >= self.lr_min), "lr_max must be >= lr_min");
        check(self.lookahead_k >= 1, "lookahead_k must be >= 1");
        check(
            self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0,
            "lookahead_alpha must be in (0, 1]",
        );
        check(self.betas.0 > 0.0 && self.betas.0 < 1.0, "betas.0 must be in (0, 1)");
        check(self.betas.1 > 0.0 && self.betas.1 < 1.0, "betas.1 must be in (0, 1)");
        check(self.eps > 0.0, "eps must be positive");
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0");
        check(self.grad_clip >= 0.0, "grad_clip must be >= 0");
        check(
            self.valid_fraction > 0.0 && self.valid_fraction < 0.5,
            "valid_fraction must be in (0, 0.5)",
        );
        check(self.finder_batches >= 2, "finder_batches must be >= 2");
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(p.join("; ")))
        }
    }

    pub fn plan(&self) -> WindowPlan {
        WindowPlan {
            window_len: self.window_len,
            chunk_len: self.chunk_len,
            batch_size: self.batch_size,
            seed: self.seed,
            batches_per_epoch: self.batches_per_epoch,
        }
    }

    /// Leading steps of every window excluded from the loss.
    pub fn mask_len<S: Scalar>(&self, model: &Model<S>) -> Result<usize> {
        let depth = model.spec.depth;
        match model.spec.arch {
            Arch::Tcn => receptive_field(depth),
            Arch::Gru => Ok(match self.warmup_mask_n {
                Some(n) => n,
                None => receptive_field(depth)?.min(self.chunk_len / 2),
            }),
        }
    }
}

/// Samples excluded from the loss, one flag per `(batch, time)` position.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMask {
    batch: usize,
    len: usize,
    excluded: Vec<bool>,
}

impl LossMask {
    pub fn none(batch: usize, len: usize) -> Self {
        Self {
            batch,
            len,
            excluded: vec![false; batch * len],
        }
    }

    /// Excludes the first `n` steps of every row.
    pub fn leading(batch: usize, len: usize, n: usize) -> Self {
        let mut m = Self::none(batch, len);
        for b in 0..batch {
            m.excluded[b * len..b * len + n.min(len)].fill(true);
        }
        m
    }

    pub fn from_flags(batch: usize, len: usize, excluded: Vec<bool>) -> Result<Self> {
        if excluded.len() != batch * len {
            return Err(Error::dim("loss mask", &[batch, len], &[excluded.len()]));
        }
        Ok(Self { batch, len, excluded })
    }

    pub fn is_excluded(&self, b: usize, t: usize) -> bool {
        self.excluded[b * self.len + t]
    }

    pub fn included(&self) -> usize {
        self.excluded.iter().filter(|&&e| !e).count()
    }
}

/// Mean squared error over unmasked positions and its gradient with
/// respect to `y_hat`. Masked targets are never read.
pub fn masked_mse_grad<S: Scalar>(y_hat: &Tensor<S>, y: &Tensor<S>, mask: &LossMask) -> Result<(S, Tensor<S>)> {
    if y_hat.shape() != y.shape() || y.ndim() != 3 {
        return Err(Error::dim("masked_mse", y_hat.shape(), y.shape()));
    }
    let (batch, len, width) = (y.dim(0), y.dim(1), y.dim(2));
    if mask.batch != batch || mask.len != len {
        return Err(Error::dim("masked_mse mask", &[mask.batch, mask.len], &[batch, len]));
    }
    let count = mask.included() * width;
    if count == 0 {
        return Err(Error::Loss(
            "every sample is masked; window or chunk is too short for the masked transient".into(),
        ));
    }
    let n = S::of(count as f64);
    let two = S::of(2.0);
    let mut grad = Tensor::zeros(y.shape());
    let mut sum = S::zero();
    for b in 0..batch {
        for t in 0..len {
            if mask.is_excluded(b, t) {
                continue;
            }
            let at = (b * len + t) * width;
            for i in at..at + width {
                let d = y_hat.data()[i] - y.data()[i];
                sum += d * d;
                grad.data_mut()[i] = two * d / n;
            }
        }
    }
    Ok((sum / n, grad))
}

pub fn masked_mse<S: Scalar>(y_hat: &Tensor<S>, y: &Tensor<S>, mask: &LossMask) -> Result<S> {
    Ok(masked_mse_grad(y_hat, y, mask)?.0)
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·t/T))`.
pub fn cosine_schedule(lr_max: f64, lr_min: f64, t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Parameter("cosine schedule length must be positive".into()));
    }
    if t > total {
        return Err(Error::Parameter(format!("cosine schedule step {t} beyond {total}")));
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// RAdam moments plus Lookahead slow weights.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S: Scalar> {
    pub step: u64,
    pub m: ParamStore<S>,
    pub v: ParamStore<S>,
    pub slow: ParamStore<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            slow: params.clone(),
        }
    }
}

/// Length of the approximated simple moving average at step `t`:
/// `ρ_t = ρ∞ − 2tβ2^t/(1−β2^t)` with `ρ∞ = 2/(1−β2) − 1`.
pub fn radam_rho(beta2: f64, t: u64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b_t = beta2.powf(t as f64);
    rho_inf - 2.0 * t as f64 * b_t / (1.0 - b_t)
}

/// One RAdam update at learning rate `lr` followed, every `lookahead_k`
/// steps, by the Lookahead synchronisation
/// `slow ← slow + α(fast − slow); fast ← slow`.
///
/// With `ρ_t > 4` the step is `lr·r_t·m̂/(√v̂ + eps)` with the variance
/// rectification `r_t = √((ρ_t−4)(ρ_t−2)ρ∞ / ((ρ∞−4)(ρ∞−2)ρ_t))`; otherwise
/// it is the un-adapted `lr·m̂`. Weight decay is decoupled:
/// `θ ← θ − lr·wd·θ` before the update.
pub fn radam_lookahead_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &ParamStore<S>,
    state: &mut OptimizerState<S>,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::State("gradient layout does not match the parameters".into()));
    }
    for (name, g) in grads.iter() {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Optimizer(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step;
    let (beta1, beta2) = config.betas;
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho = radam_rho(beta2, t);
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    let adaptive = rho > 4.0;
    let rect = if adaptive {
        ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt()
    } else {
        0.0
    };
    let (b1, b2) = (S::of(beta1), S::of(beta2));
    let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
    let decay = S::one() - S::of(lr * config.weight_decay);
    let step_plain = S::of(lr / bc1);
    let step_adapt = S::of(lr * rect / bc1);
    let inv_bc2 = S::of(1.0 / bc2);
    let eps = S::of(config.eps);

    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            if config.weight_decay != 0.0 {
                *p *= decay;
            }
            if adaptive {
                *p -= step_adapt * *m / ((*v * inv_bc2).sqrt() + eps);
            } else {
                *p -= step_plain * *m;
            }
        }
    }

    if t % config.lookahead_k as u64 == 0 {
        let alpha = S::of(config.lookahead_alpha);
        for ((_, slow), (_, fast)) in state.slow.iter_mut().zip(params.iter_mut()) {
            for (s, f) in slow.data_mut().iter_mut().zip(fast.data_mut()) {
                if config.lookahead_alpha == 1.0 {
                    *s = *f;
                } else {
                    *s += alpha * (*f - *s);
                    *f = *s;
                }
            }
        }
    }
    Ok(())
}

/// Rescales `grads` in place so that their global norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut ParamStore<S>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(S::of(max_norm / norm));
    }
    norm
}

/// Loss, squared-error statistics, gradients and carried state of one
/// chunk.
#[derive(Clone, Debug)]
pub struct ChunkOutcome<S: Scalar> {
    pub loss: S,
    pub sq_err: f64,
    pub count: usize,
    pub grads: ParamStore<S>,
    pub state: HiddenState<S>,
}

/// Forward and backward pass over one chunk batch starting from `state`.
/// Gradients stop at the chunk start.
pub fn chunk_gradients<S: Scalar>(
    model: &Model<S>,
    u: &Tensor<S>,
    y: &Tensor<S>,
    state: &HiddenState<S>,
    mask: &LossMask,
    teacher_forcing: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ChunkOutcome<S>> {
    let teacher = (teacher_forcing && model.spec.is_ar()).then_some(y);
    let opts = ForwardOpts { teacher, dropout_rng };
    let (y_hat, next, tape) = model.forward_taped(u, state, opts)?;
    let (loss, grad) = masked_mse_grad(&y_hat, y, mask)?;
    let count = mask.included() * y.dim(2);
    let sq_err = loss.as_f64() * count as f64;
    let grads = model.backward(&tape, &grad)?;
    Ok(ChunkOutcome {
        loss,
        sq_err,
        count,
        grads,
        state: next,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    Constant,
    /// Cosine annealing over `total` optimizer steps, `done` taken so far.
    Cosine { done: usize, total: usize },
}

/// Everything the training loop carries between epochs.
#[derive(Clone, Debug)]
pub struct TrainState<S: Scalar> {
    pub optimizer: OptimizerState<S>,
    pub lr_max: f64,
    pub lr: f64,
    pub phase: Phase,
    pub best_valid_rmse: f64,
    pub epochs_since_improvement: usize,
    pub global_step: usize,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(params: &ParamStore<S>, lr_max: f64) -> Self {
        Self {
            optimizer: OptimizerState::new(params),
            lr_max,
            lr: lr_max,
            phase: Phase::Constant,
            best_valid_rmse: f64::INFINITY,
            epochs_since_improvement: 0,
            global_step: 0,
        }
    }

    fn next_lr(&mut self, lr_min: f64) -> Result<f64> {
        self.lr = match &mut self.phase {
            Phase::Constant => self.lr_max,
            Phase::Cosine { done, total } => {
                let lr = cosine_schedule(self.lr_max, lr_min, (*done).min(*total), *total)?;
                *done += 1;
                lr
            }
        };
        Ok(self.lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Root mean squared error over the unmasked training samples, in
    /// standardized units, accumulated while training.
    pub train_rmse: f64,
    pub steps: usize,
    pub skipped_chunks: usize,
}

/// One epoch of truncated BPTT over standardized data.
pub fn train_epoch<S: Scalar>(
    model: &mut Model<S>,
    data: &SequenceData<S>,
    config: &TrainConfig,
    state: &mut TrainState<S>,
    epoch: usize,
) -> Result<EpochMetrics> {
    let plan = config.plan();
    let mask_n = config.mask_len(model)?;
    if mask_n >= config.window_len {
        return Err(Error::Loss(format!(
            "the first {mask_n} samples of each window are masked but windows are only {} long",
            config.window_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64));
    let use_dropout = model.spec.dropout > 0.0;
    let (mut sq, mut count, mut steps, mut skipped) = (0.0, 0usize, 0usize, 0usize);
    let mut hidden = model.zero_state(config.batch_size);
    for chunk in sample_windows(data, &plan, epoch as u64)? {
        if chunk.first {
            hidden = model.zero_state(chunk.windows.len());
        }
        let (b, c) = (chunk.u.dim(0), chunk.u.dim(1));
        let masked_here = if chunk.first { mask_n } else { mask_n.saturating_sub(chunk.chunk_index * c) };
        if masked_here >= c {
            // Nothing to learn from; only advance the state.
            let (_, next) = model.forward(&chunk.u, &hidden)?;
            hidden = next;
            skipped += 1;
            continue;
        }
        let mask = LossMask::leading(b, c, masked_here);
        let out = chunk_gradients(
            model,
            &chunk.u,
            &chunk.y,
            &hidden,
            &mask,
            config.teacher_forcing,
            use_dropout.then_some(&mut rng),
        )?;
        if !out.loss.is_finite() {
            return Err(Error::Training {
                step: state.global_step,
                message: "loss is not finite".into(),
            });
        }
        let mut grads = out.grads;
        clip_global_norm(&mut grads, config.grad_clip);
        let lr = state.next_lr(config.lr_min)?;
        radam_lookahead_step(&mut model.params, &grads, &mut state.optimizer, config, lr).map_err(|e| {
            Error::Training {
                step: state.global_step,
                message: e.to_string(),
            }
        })?;
        sq += out.sq_err;
        count += out.count;
        hidden = out.state;
        steps += 1;
        state.global_step += 1;
    }
    Ok(EpochMetrics {
        train_rmse: if count > 0 { (sq / count as f64).sqrt() } else { f64::NAN },
        steps,
        skipped_chunks: skipped,
    })
}

/// Anything the learning-rate finder can take optimisation steps on.
pub trait FinderTarget {
    /// Computes the loss at the current parameters, then takes one step at
    /// learning rate `lr`; returns the loss.
    fn train_step(&mut self, lr: f64) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinderConfig {
    pub start_lr: f64,
    pub end_lr: f64,
    pub steps: usize,
    pub smoothing: f64,
    pub divergence: f64,
}

impl Default for FinderConfig {
    fn default() -> Self {
        Self {
            start_lr: 1e-7,
            end_lr: 1.0,
            steps: 100,
            smoothing: 0.98,
            divergence: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinderResult {
    pub suggestion: f64,
    pub lr_at_min: f64,
    pub lrs: Vec<f64>,
    /// Bias-corrected exponentially smoothed losses.
    pub smoothed: Vec<f64>,
}

/// Geometric learning-rate sweep; suggests a tenth of the rate at which the
/// smoothed loss was lowest. Stops early once the smoothed loss exceeds
/// `divergence` times its best value.
pub fn lr_sweep(target: &mut dyn FinderTarget, cfg: &FinderConfig) -> Result<FinderResult> {
    if !(cfg.start_lr > 0.0 && cfg.end_lr > cfg.start_lr && cfg.steps >= 2) {
        return Err(Error::Parameter("finder needs 0 < start_lr < end_lr and >= 2 steps".into()));
    }
    let ratio = (cfg.end_lr / cfg.start_lr).powf(1.0 / (cfg.steps - 1) as f64);
    let (mut avg, mut best, mut lr_at_min) = (0.0, f64::INFINITY, cfg.start_lr);
    let (mut lrs, mut smoothed) = (Vec::new(), Vec::new());
    for i in 0..cfg.steps {
        let lr = cfg.start_lr * ratio.powi(i as i32);
        let loss = target.train_step(lr)?;
        if !loss.is_finite() {
            if i == 0 {
                return Err(Error::Finder(format!(
                    "loss is not finite at the first step (lr {lr:e}); start the sweep lower"
                )));
            }
            break;
        }
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
        let s = avg / (1.0 - cfg.smoothing.powi(i as i32 + 1));
        lrs.push(lr);
        smoothed.push(s);
        if s < best {
            best = s;
            lr_at_min = lr;
        }
        if s > cfg.divergence * best {
            break;
        }
    }
    Ok(FinderResult {
        suggestion: lr_at_min / 10.0,
        lr_at_min,
        lrs,
        smoothed,
    })
}

/// Finder target training a private copy of a model on standardized
/// window chunks.
struct ModelTarget<'a, S: Scalar> {
    model: Model<S>,
    optimizer: OptimizerState<S>,
    data: &'a SequenceData<S>,
    config: &'a TrainConfig,
    mask_n: usize,
    queue: Vec<crate::data::ChunkBatch<S>>,
    epoch: u64,
    hidden: HiddenState<S>,
}

impl<S: Scalar> ModelTarget<'_, S> {
    fn next_chunk(&mut self) -> Result<crate::data::ChunkBatch<S>> {
        if self.queue.is_empty() {
            self.queue = sample_windows(self.data, &self.config.plan(), 1_000_000 + self.epoch)?.collect();
            self.queue.reverse();
            self.epoch += 1;
        }
        Ok(self.queue.pop().expect("an epoch has at least one chunk"))
    }
}

impl<S: Scalar> FinderTarget for ModelTarget<'_, S> {
    fn train_step(&mut self, lr: f64) -> Result<f64> {
        loop {
            let chunk = self.next_chunk()?;
            if chunk.first {
                self.hidden = self.model.zero_state(chunk.windows.len());
            }
            let (b, c) = (chunk.u.dim(0), chunk.u.dim(1));
            let masked = self.mask_n.saturating_sub(chunk.chunk_index * c);
            if masked >= c {
                self.hidden = self.model.forward(&chunk.u, &self.hidden)?.1;
                continue;
            }
            let mask = LossMask::leading(b, c, masked);
            let out = chunk_gradients(&self.model, &chunk.u, &chunk.y, &self.hidden, &mask, self.config.teacher_forcing, None)?;
            let loss = out.loss.as_f64();
            if !loss.is_finite() {
                return Ok(loss);
            }
            let mut grads = out.grads;
            clip_global_norm(&mut grads, self.config.grad_clip);
            if radam_lookahead_step(&mut self.model.params, &grads, &mut self.optimizer, self.config, lr).is_err() {
                return Ok(f64::NAN);
            }
            self.hidden = out.state;
            return Ok(loss);
        }
    }
}

/// Runs the sweep on a copy of `model`; the model itself is not touched.
pub fn lr_finder<S: Scalar>(model: &Model<S>, data: &SequenceData<S>, config: &TrainConfig) -> Result<FinderResult> {
    let copy = model.clone();
    let mut target = ModelTarget {
        optimizer: OptimizerState::new(&copy.params),
        hidden: copy.zero_state(config.batch_size),
        model: copy,
        data,
        config,
        mask_n: config.mask_len(model)?,
        queue: Vec::new(),
        epoch: 0,
    };
    let cfg = FinderConfig {
        steps: config.finder_batches,
        ..FinderConfig::default()
    };
    lr_sweep(&mut target, &cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Free-running simulation RMSE on the training split, data units.
    pub train_rmse: f64,
    pub valid_rmse: f64,
    /// Learning rate of the last optimizer step of the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult<S: Scalar> {
    /// Parameters of the epoch with the lowest validation RMSE.
    pub model: Model<S>,
    pub standardizer: Standardizer,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
    pub lr_max: f64,
    pub finder: Option<FinderResult>,
}

/// Full training workflow on raw (unstandardized) splits: standardize with
/// training statistics, find `lr_max` unless configured, train at constant
/// rate until `plateau_patience` epochs pass without a new best validation
/// RMSE, then anneal with a cosine over the remaining epochs.
pub fn fit<S: Scalar>(
    model: Model<S>,
    train: &SequenceData<S>,
    valid: &SequenceData<S>,
    config: &TrainConfig,
) -> Result<FitResult<S>> {
    fit_with(model, train, valid, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<S: Scalar>(
    mut model: Model<S>,
    train: &SequenceData<S>,
    valid: &SequenceData<S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult<S>> {
    config.validate()?;
    let standardizer = Standardizer::fit(train)?;
    let train_std = standardizer.apply(train)?;
    config.plan().validate(&train_std)?;
    let (lr_max, finder) = match config.lr_max {
        Some(lr) => (lr, None),
        None => {
            let f = lr_finder(&model, &train_std, config)?;
            log::info!("lr finder suggests {:.3e}", f.suggestion);
            (f.suggestion.max(config.lr_min), Some(f))
        }
    };
    let mut state = TrainState::new(&model.params, lr_max);
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize);
    for epoch in 0..config.max_epochs {
        let start = Instant::now();
        let metrics = train_epoch(&mut model, &train_std, config, &mut state, epoch)?;
        let train_rmse = pooled_rmse(&model, &train.sequences, &standardizer, train.transient_n)?;
        let valid_rmse = pooled_rmse(&model, &valid.sequences, &standardizer, valid.transient_n)?;
        let record = EpochRecord {
            epoch,
            train_rmse,
            valid_rmse,
            lr: state.lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: steps {} train {:.5} valid {:.5} lr {:.3e}",
            metrics.steps,
            train_rmse,
            valid_rmse,
            state.lr
        );
        on_epoch(&record);
        history.push(record);
        if valid_rmse < state.best_valid_rmse {
            state.best_valid_rmse = valid_rmse;
            state.epochs_since_improvement = 0;
            best = (model.clone(), epoch);
        } else {
            state.epochs_since_improvement += 1;
        }
        let remaining = config.max_epochs - epoch - 1;
        if state.phase == Phase::Constant && state.epochs_since_improvement >= config.plateau_patience && remaining > 0 {
            let per_epoch = metrics.steps.max(1);
            state.phase = Phase::Cosine {
                done: 0,
                total: remaining * per_epoch,
            };
            log::info!("plateau after epoch {epoch}; cosine annealing over {remaining} epochs");
        }
    }
    if !state.best_valid_rmse.is_finite() {
        return Err(Error::Training {
            step: state.global_step,
            message: "validation RMSE never became finite".into(),
        });
    }
    Ok(FitResult {
        model: best.0,
        standardizer,
        history,
        best_epoch: best.1,
        best_valid_rmse: state.best_valid_rmse,
        lr_max,
        finder,
    })
}
