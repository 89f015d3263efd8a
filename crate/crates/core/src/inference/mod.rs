//! Free-running simulation, error metrics and timing harnesses.

mod bench;

use std::time::Instant;

pub use bench::{bench_inference_time, bench_training_time, BenchRow, BenchTable};

use crate::data::{Sequence, Standardizer};
use crate::error::{Error, Result};
use crate::models::{ConvCache, Model};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

/// One cached generation step, see [`ConvCache::step`].
pub fn fast_ar_step<S: Scalar>(
    cache: &mut ConvCache<S>,
    model: &Model<S>,
    x_t: &Tensor<S>,
) -> Result<Tensor<S>> {
    cache.step(&model.params, x_t)
}

/// Simulates in standardized units: `u: T×I` → `ŷ: T×O`, zero initial
/// state, no dropout.
pub fn simulate_standardized<S: Scalar>(model: &Model<S>, u: &Tensor<S>) -> Result<Tensor<S>> {
    if u.ndim() != 2 || u.dim(1) != model.spec.input_dim {
        return Err(Error::Input(format!(
            "simulate: input has shape {:?}, model expects {} channels",
            u.shape(),
            model.spec.input_dim
        )));
    }
    let len = u.dim(0);
    let u3 = u.clone().reshape(&[1, len, model.spec.input_dim])?;
    let (y, _) = model.forward(&u3, &model.zero_state(1))?;
    y.reshape(&[len, model.spec.output_dim])
}

/// Free-running simulation from raw inputs `T×I` to raw outputs `T×O`.
pub fn simulate<S: Scalar>(model: &Model<S>, u: &Tensor<S>, standardizer: &Standardizer) -> Result<Tensor<S>> {
    if u.ndim() != 2 || u.dim(1) != standardizer.u_mean.len() {
        return Err(Error::Input(format!(
            "simulate: input has shape {:?}, standardizer has {} channels",
            u.shape(),
            standardizer.u_mean.len()
        )));
    }
    let y = simulate_standardized(model, &standardizer.apply_u(u)?)?;
    standardizer.invert_y(&y)
}

/// `sqrt(mean((ŷ−y)²))` over rows `t ≥ transient_n` and all channels,
/// times `unit_scale`.
pub fn evaluate_rmse<S: Scalar>(y_hat: &Tensor<S>, y: &Tensor<S>, transient_n: usize, unit_scale: f64) -> Result<f64> {
    if y_hat.shape() != y.shape() || y.ndim() == 0 {
        return Err(Error::dim("evaluate_rmse", y_hat.shape(), y.shape()));
    }
    let len = y.dim(0);
    if transient_n >= len {
        return Err(Error::Parameter(format!(
            "transient_n {transient_n} must be smaller than the sequence length {len}"
        )));
    }
    let width = y.len() / len;
    let skip = transient_n * width;
    let sq: f64 = y_hat.data()[skip..]
        .iter()
        .zip(&y.data()[skip..])
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok((sq / (y.len() - skip) as f64).sqrt() * unit_scale)
}

#[derive(Clone, Debug)]
pub struct SimReport<S: Scalar> {
    pub y_hat: Tensor<S>,
    /// In reporting units.
    pub rmse: f64,
    pub transient_skipped: usize,
    pub wall_seconds: f64,
}

/// Simulates `seq` and scores it against the measured output.
pub fn simulate_report<S: Scalar>(
    model: &Model<S>,
    seq: &Sequence<S>,
    standardizer: &Standardizer,
    transient_n: usize,
    unit_scale: f64,
) -> Result<SimReport<S>> {
    let start = Instant::now();
    let y_hat = simulate(model, &seq.u, standardizer)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let rmse = evaluate_rmse(&y_hat, &seq.y, transient_n, unit_scale)?;
    Ok(SimReport {
        y_hat,
        rmse,
        transient_skipped: transient_n,
        wall_seconds,
    })
}

/// RMSE over several sequences: the square root of the pooled mean square
/// error of their post-transient samples.
pub fn pooled_rmse<S: Scalar>(
    model: &Model<S>,
    seqs: &[Sequence<S>],
    standardizer: &Standardizer,
    transient_n: usize,
) -> Result<f64> {
    let (mut sq, mut n) = (0.0, 0usize);
    for seq in seqs {
        let y_hat = simulate(model, &seq.u, standardizer)?;
        let r = evaluate_rmse(&y_hat, &seq.y, transient_n, 1.0)?;
        let count = (seq.len() - transient_n) * seq.y.dim(1);
        sq += r * r * count as f64;
        n += count;
    }
    if n == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    Ok((sq / n as f64).sqrt())
}
