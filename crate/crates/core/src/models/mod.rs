//! GRU and TCN sequence models in autoregressive (AR) and
//! non-autoregressive (NAR) configurations.
//!
//! All four variants map a standardized input sequence `u: B×T×I` to a
//! standardized output sequence `B×T×O`. AR variants widen the first layer's
//! input by `O` columns that carry the previous output step; a fresh
//! sequence starts that feedback at zero (the standardized mean).
//!
//! Every variant can process a long sequence in chunks: the [`HiddenState`]
//! returned by one call is the initial state of the next, and chaining
//! reproduces the single-call result.

mod cache;
mod gru;
mod params;
mod tcn;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

pub use cache::ConvCache;
pub use gru::gru_cell;
pub use params::{init_params, param_shapes, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gru,
    Tcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ar,
    Nar,
}

/// Architecture hyperparameters of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub mode: Mode,
    /// Exogenous input channels `u`.
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    /// GRU layers or TCN conv blocks.
    pub depth: usize,
    /// TCN kernel width.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// TCN residual connections.
    #[serde(default = "default_residual")]
    pub residual: bool,
    /// Dropout probability on the activations passed between GRU layers.
    #[serde(default)]
    pub dropout: f64,
}

fn default_kernel() -> usize {
    2
}

fn default_residual() -> bool {
    true
}

impl ModelSpec {
    pub fn new(arch: Arch, mode: Mode, input_dim: usize, output_dim: usize, hidden: usize, depth: usize) -> Self {
        Self {
            arch,
            mode,
            input_dim,
            output_dim,
            hidden,
            depth,
            kernel: default_kernel(),
            residual: default_residual(),
            dropout: 0.0,
        }
    }

    pub fn gru(mode: Mode, input_dim: usize, output_dim: usize, hidden: usize, layers: usize) -> Self {
        Self::new(Arch::Gru, mode, input_dim, output_dim, hidden, layers)
    }

    pub fn tcn(mode: Mode, input_dim: usize, output_dim: usize, hidden: usize, depth: usize) -> Self {
        Self::new(Arch::Tcn, mode, input_dim, output_dim, hidden, depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.hidden < 1 {
            return Err(Error::Parameter(format!(
                "depth ({}) and hidden ({}) must be at least 1",
                self.depth, self.hidden
            )));
        }
        if self.input_dim < 1 || self.output_dim < 1 {
            return Err(Error::Parameter("input and output widths must be at least 1".into()));
        }
        if self.kernel < 1 {
            return Err(Error::Parameter("kernel must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.arch == Arch::Tcn && self.depth > 40 {
            return Err(Error::Parameter("tcn depth above 40 overflows dilations".into()));
        }
        Ok(())
    }

    pub fn is_ar(&self) -> bool {
        self.mode == Mode::Ar
    }

    /// Width of the first layer's input: `u` plus fed-back outputs in AR mode.
    pub fn effective_input(&self) -> usize {
        match self.mode {
            Mode::Ar => self.input_dim + self.output_dim,
            Mode::Nar => self.input_dim,
        }
    }

    pub fn layer_input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.effective_input()
        } else {
            self.hidden
        }
    }

    /// Dilation of TCN block `layer`.
    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    /// Past input frames TCN block `layer` reads besides the current one.
    pub fn context_len(&self, layer: usize) -> usize {
        self.dilation(layer) * (self.kernel - 1)
    }

    /// Variant label such as `GRU-NAR`.
    pub fn variant(&self) -> String {
        let arch = match self.arch {
            Arch::Gru => "GRU",
            Arch::Tcn => "TCN",
        };
        let mode = match self.mode {
            Mode::Ar => "AR",
            Mode::Nar => "NAR",
        };
        format!("{arch}-{mode}")
    }
}

/// Receptive field of a kernel-2 TCN of the given depth, `2^depth − 1`.
///
/// This is also the number of leading samples of a window excluded from the
/// loss: the first `2^depth − 1` outputs see at least one padded input.
pub fn receptive_field(depth: usize) -> Result<usize> {
    if depth < 1 {
        return Err(Error::Parameter("receptive_field: depth must be at least 1".into()));
    }
    if depth >= usize::BITS as usize {
        return Err(Error::Parameter(format!("receptive_field: depth {depth} overflows")));
    }
    Ok((1usize << depth) - 1)
}

/// State carried between consecutive chunks of one batch of sequences.
///
/// For GRUs `layers[l]` is the hidden state `B×H` of layer `l`. For TCNs it
/// is the tail of layer `l`'s input, `B×context_len(l)×C_l`, oldest frame
/// first. AR models additionally carry their last output `B×O`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState<S: Scalar> {
    pub layers: Vec<Tensor<S>>,
    pub last_output: Option<Tensor<S>>,
}

impl<S: Scalar> HiddenState<S> {
    pub fn zeros(spec: &ModelSpec, batch: usize) -> Self {
        let layers = (0..spec.depth)
            .map(|l| match spec.arch {
                Arch::Gru => Tensor::zeros(&[batch, spec.hidden]),
                Arch::Tcn => Tensor::zeros(&[batch, spec.context_len(l), spec.layer_input_width(l)]),
            })
            .collect();
        let last_output = spec.is_ar().then(|| Tensor::zeros(&[batch, spec.output_dim]));
        Self { layers, last_output }
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, |t| t.dim(0))
    }

    pub(crate) fn check(&self, spec: &ModelSpec, batch: usize) -> Result<()> {
        if self.layers.len() != spec.depth {
            return Err(Error::State(format!(
                "state has {} layers, model has {}",
                self.layers.len(),
                spec.depth
            )));
        }
        for (l, t) in self.layers.iter().enumerate() {
            let want = match spec.arch {
                Arch::Gru => vec![batch, spec.hidden],
                Arch::Tcn => vec![batch, spec.context_len(l), spec.layer_input_width(l)],
            };
            if t.shape() != want.as_slice() {
                return Err(Error::State(format!(
                    "layer {l} state shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        if spec.is_ar() {
            match &self.last_output {
                None => return Err(Error::State("AR model requires last_output in its state".into())),
                Some(t) if t.shape() != [batch, spec.output_dim] => {
                    return Err(Error::State(format!("last_output shape {:?}", t.shape())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Training-time switches for a forward pass.
#[derive(Default)]
pub struct ForwardOpts<'a, S: Scalar> {
    /// Ground-truth outputs `B×T×O` fed back instead of the model's own
    /// outputs (AR models only).
    pub teacher: Option<&'a Tensor<S>>,
    /// Source of dropout masks; `None` disables dropout.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

/// Activations recorded by [`Model::forward_taped`] for the backward pass.
pub struct Tape<S: Scalar> {
    inner: TapeKind<S>,
}

enum TapeKind<S: Scalar> {
    Gru(gru::GruTape<S>),
    Tcn(tcn::TcnTape<S>),
}

/// A model spec together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S: Scalar> {
    pub spec: ModelSpec,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(spec: ModelSpec, params: ParamStore<S>) -> Result<Self> {
        spec.validate()?;
        params.validate(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn zero_state(&self, batch: usize) -> HiddenState<S> {
        HiddenState::zeros(&self.spec, batch)
    }

    fn check_input(&self, u: &Tensor<S>) -> Result<(usize, usize)> {
        if u.ndim() != 3 || u.dim(2) != self.spec.input_dim {
            return Err(Error::dim("model input", u.shape(), &[0, 0, self.spec.input_dim]));
        }
        if u.dim(1) < 1 {
            return Err(Error::Input("sequence length must be at least 1".into()));
        }
        Ok((u.dim(0), u.dim(1)))
    }

    /// Inference forward pass of any variant from the given state.
    pub fn forward(&self, u: &Tensor<S>, state: &HiddenState<S>) -> Result<(Tensor<S>, HiddenState<S>)> {
        match (self.spec.arch, self.spec.mode) {
            (Arch::Gru, Mode::Nar) => self.gru_forward(u, state),
            (Arch::Gru, Mode::Ar) => self.gru_forward_ar(u, state),
            (Arch::Tcn, Mode::Nar) => self.tcn_forward_from(u, state),
            (Arch::Tcn, Mode::Ar) => self.tcn_forward_ar(u, state),
        }
    }

    /// Stacked GRU layers with a linear head (GRU-NAR).
    pub fn gru_forward(&self, u: &Tensor<S>, h0: &HiddenState<S>) -> Result<(Tensor<S>, HiddenState<S>)> {
        self.require(Arch::Gru, Mode::Nar)?;
        let (y, state, _) = self.forward_taped(u, h0, ForwardOpts::default())?;
        Ok((y, state))
    }

    /// Free-running GRU whose previous output is part of each step's input
    /// (GRU-AR).
    pub fn gru_forward_ar(&self, u: &Tensor<S>, h0: &HiddenState<S>) -> Result<(Tensor<S>, HiddenState<S>)> {
        self.require(Arch::Gru, Mode::Ar)?;
        let (y, state, _) = self.forward_taped(u, h0, ForwardOpts::default())?;
        Ok((y, state))
    }

    /// Stateless TCN-NAR: zero left padding.
    pub fn tcn_forward(&self, u: &Tensor<S>) -> Result<Tensor<S>> {
        self.require(Arch::Tcn, Mode::Nar)?;
        let (batch, _) = self.check_input(u)?;
        let (y, _) = self.tcn_forward_from(u, &self.zero_state(batch))?;
        Ok(y)
    }

    /// TCN-NAR continuing from the input tails of a previous chunk.
    pub fn tcn_forward_from(&self, u: &Tensor<S>, state: &HiddenState<S>) -> Result<(Tensor<S>, HiddenState<S>)> {
        self.require(Arch::Tcn, Mode::Nar)?;
        let (y, state, _) = self.forward_taped(u, state, ForwardOpts::default())?;
        Ok((y, state))
    }

    /// Step-by-step TCN-AR generation through per-layer ring buffers, so each
    /// step costs the same regardless of how long the sequence already is.
    pub fn tcn_forward_ar(&self, u: &Tensor<S>, state: &HiddenState<S>) -> Result<(Tensor<S>, HiddenState<S>)> {
        self.require(Arch::Tcn, Mode::Ar)?;
        let (batch, len) = self.check_input(u)?;
        state.check(&self.spec, batch)?;
        let mut cache = ConvCache::from_state(&self.spec, state)?;
        let (i_dim, o_dim) = (self.spec.input_dim, self.spec.output_dim);
        let width = i_dim + o_dim;
        let mut feedback = state
            .last_output
            .clone()
            .ok_or_else(|| Error::State("missing last_output".into()))?;
        let mut y = Tensor::zeros(&[batch, len, o_dim]);
        let mut x = Tensor::zeros(&[batch, width]);
        for t in 0..len {
            for b in 0..batch {
                let row = &mut x.data_mut()[b * width..(b + 1) * width];
                row[..i_dim].copy_from_slice(&u.data()[(b * len + t) * i_dim..(b * len + t + 1) * i_dim]);
                row[i_dim..].copy_from_slice(&feedback.data()[b * o_dim..(b + 1) * o_dim]);
            }
            let out = cache.step(&self.params, &x)?;
            for b in 0..batch {
                y.data_mut()[(b * len + t) * o_dim..(b * len + t + 1) * o_dim]
                    .copy_from_slice(&out.data()[b * o_dim..(b + 1) * o_dim]);
            }
            feedback = out;
        }
        let mut next = cache.into_state()?;
        next.last_output = Some(feedback);
        Ok((y, next))
    }

    fn require(&self, arch: Arch, mode: Mode) -> Result<()> {
        if self.spec.arch != arch || self.spec.mode != mode {
            return Err(Error::Usage(format!(
                "operation for {:?}-{:?} called on a {} model",
                arch,
                mode,
                self.spec.variant()
            )));
        }
        Ok(())
    }

    /// Forward pass that records what [`Model::backward`] needs. This is the
    /// training path for all four variants; AR TCNs keep the whole chunk
    /// history rather than ring buffers here.
    pub fn forward_taped(
        &self,
        u: &Tensor<S>,
        state: &HiddenState<S>,
        opts: ForwardOpts<'_, S>,
    ) -> Result<(Tensor<S>, HiddenState<S>, Tape<S>)> {
        let (batch, len) = self.check_input(u)?;
        state.check(&self.spec, batch)?;
        if let Some(teacher) = opts.teacher {
            if !self.spec.is_ar() {
                return Err(Error::Usage("teacher forcing requires an AR model".into()));
            }
            teacher.expect_shape("teacher", &[batch, len, self.spec.output_dim])?;
        }
        match self.spec.arch {
            Arch::Gru => {
                let (y, s, tape) = gru::forward(&self.spec, &self.params, u, state, opts)?;
                Ok((y, s, Tape { inner: TapeKind::Gru(tape) }))
            }
            Arch::Tcn => {
                let (y, s, tape) = tcn::forward(&self.spec, &self.params, u, state, opts.teacher)?;
                Ok((y, s, Tape { inner: TapeKind::Tcn(tape) }))
            }
        }
    }

    /// Parameter gradients of a scalar loss given `d loss / d y` for the
    /// chunk recorded in `tape`. Nothing flows into the initial state.
    pub fn backward(&self, tape: &Tape<S>, grad_y: &Tensor<S>) -> Result<ParamStore<S>> {
        match &tape.inner {
            TapeKind::Gru(t) => gru::backward(&self.spec, &self.params, t, grad_y),
            TapeKind::Tcn(t) => tcn::backward(&self.spec, &self.params, t, grad_y),
        }
    }
}
