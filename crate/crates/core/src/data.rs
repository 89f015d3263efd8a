//! Dataset loading, standardization, splitting, window sampling and a
//! synthetic Wiener-Hammerstein system.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

/// One recorded experiment: inputs `T×I` and outputs `T×O`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<S: Scalar> {
    pub u: Tensor<S>,
    pub y: Tensor<S>,
}

impl<S: Scalar> Sequence<S> {
    pub fn new(u: Tensor<S>, y: Tensor<S>) -> Result<Self> {
        if u.ndim() != 2 || y.ndim() != 2 || u.dim(0) != y.dim(0) {
            return Err(Error::dim("sequence", u.shape(), y.shape()));
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `start..end` of both signals.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            u: rows(&self.u, start, end)?,
            y: rows(&self.y, start, end)?,
        })
    }
}

fn rows<S: Scalar>(t: &Tensor<S>, start: usize, end: usize) -> Result<Tensor<S>> {
    let w = t.dim(1);
    if start > end || end > t.dim(0) {
        return Err(Error::Input(format!("row range {start}..{end} outside 0..{}", t.dim(0))));
    }
    Tensor::from_vec(&[end - start, w], t.data()[start * w..end * w].to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData<S: Scalar> {
    pub sequences: Vec<Sequence<S>>,
    pub u_names: Vec<String>,
    pub y_names: Vec<String>,
    pub sample_rate: Option<f64>,
    /// Leading samples of every simulation excluded from reported errors.
    pub transient_n: usize,
}

impl<S: Scalar> SequenceData<S> {
    pub fn new(sequences: Vec<Sequence<S>>, u_names: Vec<String>, y_names: Vec<String>) -> Result<Self> {
        let data = Self {
            sequences,
            u_names,
            y_names,
            sample_rate: None,
            transient_n: 0,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Data("no sequences".into()));
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if s.u.dim(0) != s.y.dim(0) {
                return Err(Error::Data(format!("sequence {i}: u and y lengths differ")));
            }
            if s.u.dim(1) != self.u_names.len() || s.y.dim(1) != self.y_names.len() {
                return Err(Error::Data(format!("sequence {i}: channel count does not match names")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.u_names.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_names.len()
    }

    pub fn total_len(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn min_len(&self) -> usize {
        self.sequences.iter().map(Sequence::len).min().unwrap_or(0)
    }

    fn with_sequences(&self, sequences: Vec<Sequence<S>>) -> Self {
        Self {
            sequences,
            u_names: self.u_names.clone(),
            y_names: self.y_names.clone(),
            sample_rate: self.sample_rate,
            transient_n: self.transient_n,
        }
    }

    /// Concatenation of the sequences of both sets.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        if self.u_names != other.u_names || self.y_names != other.y_names {
            return Err(Error::Data("cannot merge datasets with different channels".into()));
        }
        let mut seqs = self.sequences.clone();
        seqs.extend(other.sequences.iter().cloned());
        Ok(self.with_sequences(seqs))
    }
}

/// Reads one sequence from a CSV file with a header row. Row numbers in
/// errors count the header as row 1.
pub fn load_csv<S: Scalar>(path: &Path, u_cols: &[String], y_cols: &[String]) -> Result<SequenceData<S>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &String| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in {}", path.display())))
    };
    let u_idx = u_cols.iter().map(find).collect::<Result<Vec<_>>>()?;
    let y_idx = y_cols.iter().map(find).collect::<Result<Vec<_>>>()?;
    let (mut u, mut y) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let cell = |idx: usize| -> Result<S> {
            let cell = record.get(idx).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field {}", idx + 1),
            })?;
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("'{cell}' is not a number"),
            })?;
            Ok(S::of(v))
        };
        for &idx in &u_idx {
            u.push(cell(idx)?);
        }
        for &idx in &y_idx {
            y.push(cell(idx)?);
        }
    }
    let len = u.len() / u_cols.len().max(1);
    let seq = Sequence::new(
        Tensor::from_vec(&[len, u_cols.len()], u)?,
        Tensor::from_vec(&[len, y_cols.len()], y)?,
    )?;
    SequenceData::new(vec![seq], u_cols.to_vec(), y_cols.to_vec())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            row: 1,
            message: format!("{other:?}"),
        },
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn channel_stats<S: Scalar>(parts: impl Iterator<Item = Tensor<S>>, names: &[String]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = names.len();
    let (mut sum, mut n) = (vec![0.0; c], 0usize);
    let parts: Vec<_> = parts.collect();
    for t in &parts {
        for row in t.data().chunks_exact(c) {
            row.iter().zip(&mut sum).for_each(|(v, s)| *s += v.as_f64());
        }
        n += t.dim(0);
    }
    if n < 2 {
        return Err(Error::Data("standardizer needs at least 2 samples per channel".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut var = vec![0.0; c];
    for t in &parts {
        for row in t.data().chunks_exact(c) {
            for ((v, m), acc) in row.iter().zip(&mean).zip(&mut var) {
                let d = v.as_f64() - m;
                *acc += d * d;
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    if let Some(i) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Data(format!("channel '{}' has zero variance", names[i])));
    }
    Ok((mean, std))
}

fn shift_scale<S: Scalar>(t: &Tensor<S>, mean: &[f64], std: &[f64], forward: bool) -> Result<Tensor<S>> {
    let c = *t.shape().last().unwrap_or(&0);
    if c != mean.len() {
        return Err(Error::dim("standardizer", t.shape(), &[mean.len()]));
    }
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
            let x = v.as_f64();
            *v = S::of(if forward { (x - m) / s } else { x * s + m });
        }
    }
    Ok(out)
}

impl Standardizer {
    /// Statistics over all sequences of `train` concatenated.
    pub fn fit<S: Scalar>(train: &SequenceData<S>) -> Result<Self> {
        let (u_mean, u_std) = channel_stats(train.sequences.iter().map(|s| s.u.clone()), &train.u_names)?;
        let (y_mean, y_std) = channel_stats(train.sequences.iter().map(|s| s.y.clone()), &train.y_names)?;
        Ok(Self { u_mean, u_std, y_mean, y_std })
    }

    pub fn apply<S: Scalar>(&self, data: &SequenceData<S>) -> Result<SequenceData<S>> {
        let seqs = data
            .sequences
            .iter()
            .map(|s| Sequence::new(self.apply_u(&s.u)?, self.apply_y(&s.y)?))
            .collect::<Result<_>>()?;
        Ok(data.with_sequences(seqs))
    }

    pub fn invert<S: Scalar>(&self, data: &SequenceData<S>) -> Result<SequenceData<S>> {
        let seqs = data
            .sequences
            .iter()
            .map(|s| {
                Sequence::new(
                    shift_scale(&s.u, &self.u_mean, &self.u_std, false)?,
                    self.invert_y(&s.y)?,
                )
            })
            .collect::<Result<_>>()?;
        Ok(data.with_sequences(seqs))
    }

    /// Works on any tensor whose last axis is the input channel axis.
    pub fn apply_u<S: Scalar>(&self, u: &Tensor<S>) -> Result<Tensor<S>> {
        shift_scale(u, &self.u_mean, &self.u_std, true)
    }

    pub fn apply_y<S: Scalar>(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        shift_scale(y, &self.y_mean, &self.y_std, true)
    }

    pub fn invert_y<S: Scalar>(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        shift_scale(y, &self.y_mean, &self.y_std, false)
    }
}

/// Splits every sequence into a leading training part and a contiguous
/// validation tail of `round(T·valid_fraction)` samples.
///
/// The split is fully determined by the data and the fraction; `_seed` is
/// accepted for interface symmetry with the other sampling functions.
pub fn split_estimation<S: Scalar>(
    data: &SequenceData<S>,
    valid_fraction: f64,
    _seed: u64,
) -> Result<(SequenceData<S>, SequenceData<S>)> {
    if !(valid_fraction > 0.0 && valid_fraction < 0.5) {
        return Err(Error::Parameter(format!(
            "valid_fraction must be in (0, 0.5), got {valid_fraction}"
        )));
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, s) in data.sequences.iter().enumerate() {
        let n_valid = (s.len() as f64 * valid_fraction).round() as usize;
        if n_valid == 0 || n_valid >= s.len() {
            return Err(Error::Data(format!("sequence {i} of length {} is too short to split", s.len())));
        }
        let cut = s.len() - n_valid;
        train.push(s.slice(0, cut)?);
        valid.push(s.slice(cut, s.len())?);
    }
    Ok((data.with_sequences(train), data.with_sequences(valid)))
}

/// How one epoch is cut into mini-batches of windows and chunks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_len: usize,
    pub chunk_len: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Window batches per epoch. `None` draws one window per `chunk_len`
    /// valid start positions, rounded up to whole batches.
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
}

impl WindowPlan {
    pub fn new(window_len: usize, chunk_len: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            window_len,
            chunk_len,
            batch_size,
            seed,
            batches_per_epoch: None,
        }
    }

    pub fn chunks_per_window(&self) -> usize {
        self.window_len / self.chunk_len.max(1)
    }

    pub fn validate<S: Scalar>(&self, data: &SequenceData<S>) -> Result<()> {
        if self.chunk_len == 0 || self.batch_size == 0 || self.window_len == 0 {
            return Err(Error::Plan("window, chunk and batch sizes must be positive".into()));
        }
        if self.window_len % self.chunk_len != 0 {
            return Err(Error::Plan(format!(
                "window_len {} is not a multiple of chunk_len {}",
                self.window_len, self.chunk_len
            )));
        }
        if self.window_len > data.min_len() {
            return Err(Error::Plan(format!(
                "window_len {} exceeds the shortest sequence ({} samples)",
                self.window_len,
                data.min_len()
            )));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Plan("batches_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn batches_for<S: Scalar>(&self, data: &SequenceData<S>) -> usize {
        self.batches_per_epoch.unwrap_or_else(|| {
            let starts: usize = data.sequences.iter().map(|s| s.len() + 1 - self.window_len.min(s.len())).sum();
            starts.div_ceil(self.chunk_len).div_ceil(self.batch_size).max(1)
        })
    }
}

/// Start of one window within the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    /// Unique within an epoch.
    pub id: usize,
    pub sequence: usize,
    pub start: usize,
}

/// Chunk `chunk_index` of every window of one window batch.
#[derive(Clone, Debug)]
pub struct ChunkBatch<S: Scalar> {
    /// `B×chunk_len×I`
    pub u: Tensor<S>,
    /// `B×chunk_len×O`
    pub y: Tensor<S>,
    /// First chunk of its windows: state must be reset and the transient
    /// masked.
    pub first: bool,
    pub batch_index: usize,
    pub chunk_index: usize,
    pub windows: Vec<WindowRef>,
}

/// Random window starts for `epoch`, from a generator seeded by
/// `plan.seed + epoch`. Every valid start position of every sequence is
/// equally likely.
pub fn window_starts<S: Scalar>(data: &SequenceData<S>, plan: &WindowPlan, epoch: u64) -> Result<Vec<Vec<WindowRef>>> {
    plan.validate(data)?;
    let counts: Vec<usize> = data.sequences.iter().map(|s| s.len() - plan.window_len + 1).collect();
    let total: usize = counts.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(epoch));
    let mut id = 0;
    let mut batches = Vec::new();
    for _ in 0..plan.batches_for(data) {
        let mut windows = Vec::with_capacity(plan.batch_size);
        for _ in 0..plan.batch_size {
            let mut k = rng.gen_range(0..total);
            let mut sequence = 0;
            while k >= counts[sequence] {
                k -= counts[sequence];
                sequence += 1;
            }
            windows.push(WindowRef { id, sequence, start: k });
            id += 1;
        }
        batches.push(windows);
    }
    Ok(batches)
}

/// Iterator over the chunk batches of one epoch, in order: all chunks of
/// window batch 0, then of window batch 1, and so on.
pub struct WindowStream<'a, S: Scalar> {
    data: &'a SequenceData<S>,
    chunk_len: usize,
    chunks_per_window: usize,
    batches: Vec<Vec<WindowRef>>,
    next: (usize, usize),
}

impl<S: Scalar> Iterator for WindowStream<'_, S> {
    type Item = ChunkBatch<S>;

    fn next(&mut self) -> Option<ChunkBatch<S>> {
        let (bi, ci) = self.next;
        let windows = self.batches.get(bi)?.clone();
        self.next = if ci + 1 == self.chunks_per_window { (bi + 1, 0) } else { (bi, ci + 1) };
        let (c, i_dim, o_dim) = (self.chunk_len, self.data.input_dim(), self.data.output_dim());
        let (mut u, mut y) = (Vec::new(), Vec::new());
        for w in &windows {
            let s = &self.data.sequences[w.sequence];
            let from = w.start + ci * c;
            u.extend_from_slice(&s.u.data()[from * i_dim..(from + c) * i_dim]);
            y.extend_from_slice(&s.y.data()[from * o_dim..(from + c) * o_dim]);
        }
        let b = windows.len();
        Some(ChunkBatch {
            u: Tensor::from_vec(&[b, c, i_dim], u).ok()?,
            y: Tensor::from_vec(&[b, c, o_dim], y).ok()?,
            first: ci == 0,
            batch_index: bi,
            chunk_index: ci,
            windows,
        })
    }
}

pub fn sample_windows<'a, S: Scalar>(
    data: &'a SequenceData<S>,
    plan: &WindowPlan,
    epoch: u64,
) -> Result<WindowStream<'a, S>> {
    let batches = window_starts(data, plan, epoch)?;
    Ok(WindowStream {
        data,
        chunk_len: plan.chunk_len,
        chunks_per_window: plan.chunks_per_window(),
        batches,
        next: (0, 0),
    })
}

/// Second-order section `b0 + b1 q⁻¹ + b2 q⁻²` over `1 + a1 q⁻¹ + a2 q⁻²`,
/// zero initial state.
#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                (x2, x1, y2, y1) = (x1, x0, y1, y0);
                y0
            })
            .collect()
    }
}

/// Input filter: poles at `0.8·e^{±0.3i}`, DC gain ≈ 0.67.
pub const WH_G1: Biquad = Biquad {
    b: [0.05, 0.025, 0.0],
    a: [-1.528_538_4, 0.64],
};
/// Output filter: poles at `0.7·e^{±0.6i}`, DC gain ≈ 1.2.
pub const WH_G2: Biquad = Biquad {
    b: [0.3, 0.1, 0.0],
    a: [-1.155_469_9, 0.49],
};

/// Noise-free response `G2(tanh(2·G1(u)))` from rest.
pub fn wiener_hammerstein_response(u: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = WH_G1.filter(u).into_iter().map(|v| (2.0 * v).tanh()).collect();
    WH_G2.filter(&x)
}

/// `n` samples of a Wiener-Hammerstein system driven by unit-variance
/// first-order low-pass noise `u_t = 0.5 u_{t−1} + √0.75 e_t`, with white
/// Gaussian measurement noise of standard deviation `noise_std` on `y`.
pub fn synth_wiener_hammerstein<S: Scalar>(n: usize, seed: u64, noise_std: f64) -> Result<SequenceData<S>> {
    if n < 1 {
        return Err(Error::Parameter("synth_wiener_hammerstein needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = 0.75f64.sqrt();
    let mut prev = 0.0;
    let u: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            prev = 0.5 * prev + gain * e;
            prev
        })
        .collect();
    let clean = wiener_hammerstein_response(&u);
    let y: Vec<f64> = clean
        .iter()
        .map(|&v| v + noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let seq = Sequence::new(Tensor::from_f64(&[n, 1], &u)?, Tensor::from_f64(&[n, 1], &y)?)?;
    SequenceData::new(vec![seq], vec!["u".into()], vec!["y".into()])
}

/// On-disk description of a dataset: CSV files with column mappings, or a
/// synthetic Wiener-Hammerstein recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    /// Label used in reports.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub u_cols: Vec<String>,
    #[serde(default)]
    pub y_cols: Vec<String>,
    #[serde(default)]
    pub transient_n: usize,
    #[serde(default = "one")]
    pub unit_scale: f64,
    /// Test recordings; when empty the test set is the validation split.
    #[serde(default)]
    pub test_files: Vec<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Length of the separately seeded test recording (0 = none).
    #[serde(default)]
    pub test_n: usize,
}

/// Estimation and optional test data described by a descriptor.
pub struct LoadedData<S: Scalar> {
    pub estimation: SequenceData<S>,
    pub test: Option<SequenceData<S>>,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        match &self.synthetic {
            Some(s) => {
                if !self.files.is_empty() || !self.test_files.is_empty() {
                    return Err(Error::Schema("dataset: give either files or synthetic, not both".into()));
                }
                if s.n < 1 || !(s.noise_std >= 0.0) {
                    return Err(Error::Schema("dataset.synthetic: n must be >= 1 and noise_std >= 0".into()));
                }
            }
            None => {
                if self.files.is_empty() {
                    return Err(Error::Schema("dataset: 'files' or 'synthetic' is required".into()));
                }
                if self.u_cols.is_empty() || self.y_cols.is_empty() {
                    return Err(Error::Schema("dataset: u_cols and y_cols must be non-empty".into()));
                }
            }
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::Schema("dataset.unit_scale must be positive".into()));
        }
        Ok(())
    }

    /// Relative file paths are resolved against `base`.
    pub fn load<S: Scalar>(&self, base: &Path) -> Result<LoadedData<S>> {
        self.validate()?;
        let (mut estimation, test) = match &self.synthetic {
            Some(s) => {
                let est = synth_wiener_hammerstein(s.n, s.seed, s.noise_std)?;
                let test = (s.test_n > 0)
                    .then(|| synth_wiener_hammerstein(s.test_n, s.seed.wrapping_add(1), s.noise_std))
                    .transpose()?;
                (est, test)
            }
            None => {
                let read = |files: &[String]| -> Result<Option<SequenceData<S>>> {
                    let mut out: Option<SequenceData<S>> = None;
                    for f in files {
                        let d = load_csv(&base.join(f), &self.u_cols, &self.y_cols)?;
                        out = Some(match out {
                            Some(acc) => acc.merged(&d)?,
                            None => d,
                        });
                    }
                    Ok(out)
                };
                let est = read(&self.files)?.expect("validated non-empty");
                (est, read(&self.test_files)?)
            }
        };
        estimation.transient_n = self.transient_n;
        let test = test.map(|mut t| {
            t.transient_n = self.transient_n;
            t
        });
        Ok(LoadedData { estimation, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> SequenceData<f64> {
        let u: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = u.iter().map(|v| v * 2.0).collect();
        let seq = Sequence::new(Tensor::from_vec(&[n, 1], u).unwrap(), Tensor::from_vec(&[n, 1], y).unwrap()).unwrap();
        SequenceData::new(vec![seq], vec!["u".into()], vec!["y".into()]).unwrap()
    }

    #[test]
    fn standardizer_examples() {
        let seq = Sequence::new(
            Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap(),
            Tensor::from_vec(&[2, 1], vec![0.0, 4.0]).unwrap(),
        )
        .unwrap();
        let d = SequenceData::new(vec![seq], vec!["u".into()], vec!["y".into()]).unwrap();
        let s = Standardizer::fit(&d).unwrap();
        assert_eq!((s.u_mean[0], s.u_std[0]), (2.0, 1.0));
        assert_eq!(s.apply(&d).unwrap().sequences[0].u.data(), &[-1.0, 1.0]);

        let flat = Sequence::new(
            Tensor::from_vec(&[3, 1], vec![5.0; 3]).unwrap(),
            Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let d = SequenceData::new(vec![flat], vec!["u".into()], vec!["y".into()]).unwrap();
        assert!(matches!(Standardizer::fit(&d), Err(Error::Data(_))));
    }

    #[test]
    fn split_examples() {
        let (tr, va) = split_estimation(&ramp(1000), 0.2, 1).unwrap();
        assert_eq!((tr.sequences[0].len(), va.sequences[0].len()), (800, 200));
        assert_eq!(va.sequences[0].u.data()[0], 800.0);
        assert!(matches!(split_estimation(&ramp(1000), 0.6, 1), Err(Error::Parameter(_))));
        assert!(matches!(split_estimation(&ramp(1000), 0.0, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn biquad_coefficients_match_documented_poles() {
        for (g, r, th) in [(WH_G1, 0.8f64, 0.3f64), (WH_G2, 0.7, 0.6)] {
            assert!((g.a[0] + 2.0 * r * th.cos()).abs() < 1e-7);
            assert!((g.a[1] - r * r).abs() < 1e-12);
        }
    }
}
