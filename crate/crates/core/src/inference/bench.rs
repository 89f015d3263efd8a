use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{receptive_field, Arch, Model, ModelSpec};
use crate::numkit::Tensor;
use crate::scalar::Scalar;
use crate::training::{chunk_gradients, clip_global_norm, radam_lookahead_step, LossMask, OptimizerState, TrainConfig};

const WARMUP: usize = 2;

static BENCH_RUNNING: AtomicBool = AtomicBool::new(false);

/// Held while a benchmark runs; a second concurrent benchmark in the same
/// process is refused.
struct BenchGuard;

impl BenchGuard {
    fn acquire() -> Result<Self> {
        BENCH_RUNNING
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BenchGuard)
            .map_err(|_| Error::Bench("another benchmark is already running in this process".into()))
    }
}

impl Drop for BenchGuard {
    fn drop(&mut self) {
        BENCH_RUNNING.store(false, Ordering::Release);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub mode: String,
    pub seq_len: usize,
    pub repeat: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Human-readable reasons for skipped `(variant, length)` cells.
    pub skipped: Vec<String>,
}

impl BenchTable {
    /// Median wall time per `(variant, seq_len)`, in first-seen order.
    pub fn medians(&self) -> Vec<(String, String, usize, f64)> {
        let mut keys: Vec<(String, String, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.variant.clone(), r.mode.clone(), r.seq_len);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(v, m, l)| {
                let mut t: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == v && r.seq_len == l)
                    .map(|r| r.wall_seconds)
                    .collect();
                t.sort_by(f64::total_cmp);
                let n = t.len();
                let med = if n % 2 == 1 { t[n / 2] } else { 0.5 * (t[n / 2 - 1] + t[n / 2]) };
                (v, m, l, med)
            })
            .collect()
    }

    pub fn median(&self, variant: &str, seq_len: usize) -> Option<f64> {
        self.medians()
            .into_iter()
            .find(|(v, _, l, _)| v == variant && *l == seq_len)
            .map(|m| m.3)
    }

    /// Writes `<prefix>_<stamp>.csv` (raw rows) and
    /// `<prefix>_<stamp>_medians.csv` into `dir`, refusing to overwrite.
    pub fn write_csv(&self, dir: &Path, prefix: &str, stamp: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let raw = dir.join(format!("{prefix}_{stamp}.csv"));
        let med = dir.join(format!("{prefix}_{stamp}_medians.csv"));
        let mut body = String::from("variant,mode,seq_len,repeat,wall_seconds\n");
        for r in &self.rows {
            body += &format!("{},{},{},{},{:e}\n", r.variant, r.mode, r.seq_len, r.repeat, r.wall_seconds);
        }
        write_new(&raw, &body)?;
        let mut body = String::from("variant,mode,seq_len,median_seconds\n");
        for (v, m, l, t) in self.medians() {
            body += &format!("{v},{m},{l},{t:e}\n");
        }
        write_new(&med, &body)?;
        Ok((raw, med))
    }
}

fn write_new(path: &Path, body: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

fn random_tensor<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<S> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| S::of(rng.gen_range(-1.0..1.0))).collect()).expect("shape")
}

/// TCN variants need at least a receptive field worth of samples.
fn too_short(spec: &ModelSpec, len: usize) -> Option<String> {
    if spec.arch != Arch::Tcn {
        return None;
    }
    let rf = receptive_field(spec.depth).ok()?;
    (len < rf).then(|| format!("{} skipped at length {len}: shorter than the receptive field {rf}", spec.variant()))
}

fn mode_name(spec: &ModelSpec) -> String {
    if spec.is_ar() { "ar" } else { "nar" }.into()
}

fn measure(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP {
        f()?;
    }
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect()
}

/// Wall time of one training step (free-running forward, masked loss,
/// backward, clipping and optimizer update) on a mini-batch of
/// `batch_size` sequences of each length. Two untimed warm-up runs precede
/// the `repeats` timed ones.
pub fn bench_training_time<S: Scalar>(
    specs: &[ModelSpec],
    seq_lengths: &[usize],
    batch_size: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchTable> {
    let _guard = BenchGuard::acquire()?;
    let mut table = BenchTable::default();
    let config = TrainConfig::default();
    for spec in specs {
        for &len in seq_lengths {
            if let Some(reason) = too_short(spec, len) {
                log::warn!("{reason}");
                table.skipped.push(reason);
                continue;
            }
            let mut model = Model::<S>::init(spec.clone(), seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_tensor::<S>(&mut rng, &[batch_size, len, spec.input_dim]);
            let y = random_tensor::<S>(&mut rng, &[batch_size, len, spec.output_dim]);
            let mask_n = config.mask_len(&model)?.min(len - 1);
            let mask = LossMask::leading(batch_size, len, mask_n);
            let mut opt = OptimizerState::new(&model.params);
            let times = measure(repeats, || {
                let out = chunk_gradients(&model, &u, &y, &model.zero_state(batch_size), &mask, false, None)?;
                let mut grads = out.grads;
                clip_global_norm(&mut grads, config.grad_clip);
                radam_lookahead_step(&mut model.params, &grads, &mut opt, &config, 1e-4)
            })?;
            push_rows(&mut table, spec, len, times);
        }
    }
    Ok(table)
}

/// Wall time of simulating a single sequence of each length from zero
/// state; AR TCNs go through the cached generator.
pub fn bench_inference_time<S: Scalar>(
    specs: &[ModelSpec],
    seq_lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<BenchTable> {
    let _guard = BenchGuard::acquire()?;
    let mut table = BenchTable::default();
    for spec in specs {
        for &len in seq_lengths {
            if let Some(reason) = too_short(spec, len) {
                log::warn!("{reason}");
                table.skipped.push(reason);
                continue;
            }
            let model = Model::<S>::init(spec.clone(), seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_tensor::<S>(&mut rng, &[len, spec.input_dim]);
            let times = measure(repeats, || super::simulate_standardized(&model, &u).map(|_| ()))?;
            push_rows(&mut table, spec, len, times);
        }
    }
    Ok(table)
}

fn push_rows(table: &mut BenchTable, spec: &ModelSpec, len: usize, times: Vec<f64>) {
    for (repeat, wall_seconds) in times.into_iter().enumerate() {
        table.rows.push(BenchRow {
            variant: spec.variant(),
            mode: mode_name(spec),
            seq_len: len,
            repeat,
            wall_seconds,
        });
    }
}
