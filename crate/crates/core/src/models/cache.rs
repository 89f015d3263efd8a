use super::{Arch, HiddenState, ModelSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

/// Per-block ring buffers of past block inputs for step-by-step TCN
/// generation.
///
/// Block `l` keeps the last `dilation_l·(kernel−1)` input frames (`2^l` for
/// kernel 2), which is exactly what its convolution reads besides the
/// current frame. One step therefore costs `O(depth·hidden²)` however long
/// the sequence already is. A zeroed cache is equivalent to zero left
/// padding.
#[derive(Clone, Debug)]
pub struct ConvCache<S: Scalar> {
    spec: ModelSpec,
    batch: usize,
    /// Layer `l`: `B×ctx_l×C_l`, slot-major per batch row.
    buffers: Vec<Vec<S>>,
    /// Next slot to overwrite, per layer.
    cursors: Vec<usize>,
    steps: u64,
    scratch_in: Vec<Vec<S>>,
    scratch_pre: Vec<S>,
}

impl<S: Scalar> ConvCache<S> {
    pub fn new(spec: &ModelSpec, batch: usize) -> Result<Self> {
        Self::from_state(spec, &HiddenState::zeros(spec, batch))
    }

    /// Loads linear context tails (oldest frame first) into ring buffers.
    pub fn from_state(spec: &ModelSpec, state: &HiddenState<S>) -> Result<Self> {
        if spec.arch != Arch::Tcn {
            return Err(Error::Usage("ConvCache requires a TCN spec".into()));
        }
        let batch = state.batch();
        state.check(spec, batch)?;
        let buffers = state.layers.iter().map(|t| t.data().to_vec()).collect();
        let scratch_in = (0..=spec.depth)
            .map(|l| vec![S::zero(); batch * if l < spec.depth { spec.layer_input_width(l) } else { spec.hidden }])
            .collect();
        Ok(Self {
            spec: spec.clone(),
            batch,
            buffers,
            cursors: vec![0; spec.depth],
            steps: 0,
            scratch_in,
            scratch_pre: vec![S::zero(); batch * spec.hidden],
        })
    }

    /// Unrolls the ring buffers back into linear tails; `last_output` is
    /// left empty.
    pub fn into_state(self) -> Result<HiddenState<S>> {
        self.check()?;
        let mut layers = Vec::with_capacity(self.spec.depth);
        for l in 0..self.spec.depth {
            let (ctx, cin) = (self.spec.context_len(l), self.spec.layer_input_width(l));
            let mut tail = Vec::with_capacity(self.batch * ctx * cin);
            for b in 0..self.batch {
                let ring = &self.buffers[l][b * ctx * cin..(b + 1) * ctx * cin];
                for i in 0..ctx {
                    let slot = (self.cursors[l] + i) % ctx;
                    tail.extend_from_slice(&ring[slot * cin..(slot + 1) * cin]);
                }
            }
            layers.push(Tensor::from_vec(&[self.batch, ctx, cin], tail)?);
        }
        Ok(HiddenState { layers, last_output: None })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn buffer_len(&self, layer: usize) -> usize {
        self.spec.context_len(layer)
    }

    pub fn cursor(&self, layer: usize) -> usize {
        self.cursors[layer]
    }

    /// Frame written `back` steps ago into layer `l`'s buffer (1 = previous
    /// step), batch row `b`.
    pub fn frame(&self, layer: usize, b: usize, back: usize) -> &[S] {
        let (ctx, cin) = (self.spec.context_len(layer), self.spec.layer_input_width(layer));
        let slot = (self.cursors[layer] + ctx - back) % ctx;
        &self.buffers[layer][(b * ctx + slot) * cin..(b * ctx + slot + 1) * cin]
    }

    fn check(&self) -> Result<()> {
        if self.buffers.len() != self.spec.depth || self.cursors.len() != self.spec.depth {
            return Err(Error::State("cache layer count does not match the model".into()));
        }
        for l in 0..self.spec.depth {
            let (ctx, cin) = (self.spec.context_len(l), self.spec.layer_input_width(l));
            if self.buffers[l].len() != self.batch * ctx * cin {
                return Err(Error::State(format!(
                    "layer {l} buffer holds {} values, expected {}",
                    self.buffers[l].len(),
                    self.batch * ctx * cin
                )));
            }
            if (ctx == 0 && self.cursors[l] != 0) || (ctx > 0 && self.cursors[l] >= ctx) {
                return Err(Error::State(format!("layer {l} cursor {} out of range", self.cursors[l])));
            }
        }
        Ok(())
    }

    /// Consumes one input frame `x: B×C_0` (for AR models `u_t` followed by
    /// the fed-back output) and returns the output frame `B×O`.
    pub fn step(&mut self, params: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check()?;
        let spec = &self.spec;
        let (batch, hidden, k) = (self.batch, spec.hidden, spec.kernel);
        x.expect_shape("conv cache step", &[batch, spec.effective_input()])?;
        self.scratch_in[0].copy_from_slice(x.data());
        for l in 0..spec.depth {
            let (ctx, cin, dil) = (spec.context_len(l), spec.layer_input_width(l), spec.dilation(l));
            let kernel = params.get(&format!("tcn.{l}.kernel"))?.data();
            let bias = params.get(&format!("tcn.{l}.bias"))?.data();
            let pre = &mut self.scratch_pre;
            for row in pre.chunks_exact_mut(hidden) {
                row.copy_from_slice(bias);
            }
            let (cur_part, next_part) = self.scratch_in.split_at_mut(l + 1);
            let cur = &cur_part[l];
            for j in 0..k {
                let back = dil * (k - 1 - j);
                let strides = (k, cin * k);
                if back == 0 {
                    S::gemm(batch, cin, hidden, cur, (cin, 1), &kernel[j..], strides, S::one(), pre, (hidden, 1));
                } else {
                    let slot = (self.cursors[l] + ctx - back) % ctx;
                    S::gemm(
                        batch,
                        cin,
                        hidden,
                        &self.buffers[l][slot * cin..],
                        (ctx * cin, 1),
                        &kernel[j..],
                        strides,
                        S::one(),
                        pre,
                        (hidden, 1),
                    );
                }
            }
            let out = &mut next_part[0];
            for (o, &p) in out.iter_mut().zip(pre.iter()) {
                *o = p.max(S::zero());
            }
            if spec.residual {
                if cin == hidden {
                    out.iter_mut().zip(cur.iter()).for_each(|(o, &c)| *o += c);
                } else {
                    let proj = params.get(&format!("tcn.{l}.proj"))?.data();
                    S::gemm(batch, cin, hidden, cur, (cin, 1), proj, (1, cin), S::one(), out, (hidden, 1));
                }
            }
            if ctx > 0 {
                let slot = self.cursors[l];
                for b in 0..batch {
                    self.buffers[l][(b * ctx + slot) * cin..(b * ctx + slot + 1) * cin]
                        .copy_from_slice(&cur[b * cin..(b + 1) * cin]);
                }
                self.cursors[l] = (slot + 1) % ctx;
            }
        }
        let o_dim = spec.output_dim;
        let mut y = Tensor::zeros(&[batch, o_dim]);
        let head_b = params.get("head.b")?.data();
        for row in y.data_mut().chunks_exact_mut(o_dim) {
            row.copy_from_slice(head_b);
        }
        crate::numkit::mm(
            batch,
            hidden,
            o_dim,
            &self.scratch_in[spec.depth],
            params.get("head.W")?.data(),
            S::one(),
            y.data_mut(),
        );
        self.steps += 1;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Mode};

    fn setup() -> (ModelSpec, ParamStore<f64>, ConvCache<f64>) {
        let spec = ModelSpec::tcn(Mode::Nar, 1, 1, 2, 3);
        let params = init_params(&spec, 1).unwrap();
        let cache = ConvCache::new(&spec, 2).unwrap();
        (spec, params, cache)
    }

    #[test]
    fn truncated_buffer_is_a_state_error() {
        let (_, params, mut cache) = setup();
        cache.buffers[1].pop();
        let x = Tensor::zeros(&[2, 1]);
        assert!(matches!(cache.step(&params, &x), Err(Error::State(_))));
    }

    #[test]
    fn cursor_out_of_range_is_a_state_error() {
        let (_, params, mut cache) = setup();
        cache.cursors[2] = 4;
        let x = Tensor::zeros(&[2, 1]);
        assert!(matches!(cache.step(&params, &x), Err(Error::State(_))));
        assert!(matches!(cache.into_state(), Err(Error::State(_))));
    }

    #[test]
    fn missing_layer_is_a_state_error() {
        let (_, _, mut cache) = setup();
        cache.buffers.pop();
        assert!(matches!(cache.into_state(), Err(Error::State(_))));
    }

    #[test]
    fn state_roundtrip_after_wraparound() {
        let (spec, params, mut cache) = setup();
        for t in 0..7 {
            cache.step(&params, &Tensor::full(&[2, 1], t as f64)).unwrap();
        }
        assert_eq!(cache.cursor(2), 7 % 4);
        let state = cache.clone().into_state().unwrap();
        let mut again = ConvCache::from_state(&spec, &state).unwrap();
        let x = Tensor::full(&[2, 1], 0.5);
        assert_eq!(cache.step(&params, &x).unwrap(), again.step(&params, &x).unwrap());
    }
}
