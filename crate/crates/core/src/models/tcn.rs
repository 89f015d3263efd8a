//! Temporal convolutional network: `depth` blocks of
//! dilated causal conv → ReLU → residual add, then a per-step linear head.
//! Block `l` uses dilation `2^l`.
//!
//! Arrays are batch-major. Each block's input is kept left-padded with the
//! carried context (`B×(ctx+T)×C`), which makes chunked processing exact and
//! lets every tap of the convolution be a single strided matrix product.

use super::gru::column_sums;
use super::{HiddenState, ModelSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numkit::{mm, mm_tn, Tensor};
use crate::scalar::Scalar;

pub(crate) struct TcnTape<S: Scalar> {
    batch: usize,
    len: usize,
    free_running: bool,
    /// Block inputs with context, `B×(ctx_l+T)×C_l`.
    padded: Vec<Vec<S>>,
    /// Pre-activations, `B×T×H`.
    pre: Vec<Vec<S>>,
    /// Output of the last block, `B×T×H`.
    top: Vec<S>,
}

struct Block<'a, S: Scalar> {
    cin: usize,
    ctx: usize,
    dilation: usize,
    kernel: &'a [S],
    bias: &'a [S],
    residual: Residual<'a, S>,
}

enum Residual<'a, S: Scalar> {
    None,
    Identity,
    Proj(&'a [S]),
}

fn blocks<'a, S: Scalar>(spec: &ModelSpec, params: &'a ParamStore<S>) -> Result<Vec<Block<'a, S>>> {
    (0..spec.depth)
        .map(|l| {
            let cin = spec.layer_input_width(l);
            let residual = if !spec.residual {
                Residual::None
            } else if cin == spec.hidden {
                Residual::Identity
            } else {
                Residual::Proj(params.get(&format!("tcn.{l}.proj"))?.data())
            };
            Ok(Block {
                cin,
                ctx: spec.context_len(l),
                dilation: spec.dilation(l),
                kernel: params.get(&format!("tcn.{l}.kernel"))?.data(),
                bias: params.get(&format!("tcn.{l}.bias"))?.data(),
                residual,
            })
        })
        .collect()
}

impl<S: Scalar> Block<'_, S> {
    fn shift(&self, k: usize, tap: usize) -> usize {
        self.dilation * (k - 1 - tap)
    }

    /// Strides of tap `j` of the kernel `H×C×K` viewed as a `C×H` matrix
    /// (start the slice at offset `j`).
    fn tap_strides(&self, k: usize) -> (usize, usize) {
        (k, self.cin * k)
    }

    /// Kernel tap `j` viewed as `H×C` (its transpose).
    fn tap_t_strides(&self, k: usize) -> (usize, usize) {
        (self.cin * k, k)
    }
}

/// Applies ReLU to `pre` and adds the residual branch, writing `out`.
/// `x` holds the block input rows matching `pre`'s rows.
#[allow(clippy::too_many_arguments)]
fn activate_rows<S: Scalar>(
    rows: usize,
    hidden: usize,
    block: &Block<'_, S>,
    pre: &[S],
    pre_rs: usize,
    x: &[S],
    x_rs: usize,
    out: &mut [S],
    out_rs: usize,
) {
    for r in 0..rows {
        let p = &pre[r * pre_rs..r * pre_rs + hidden];
        let o = &mut out[r * out_rs..r * out_rs + hidden];
        for (ov, &pv) in o.iter_mut().zip(p) {
            *ov = pv.max(S::zero());
        }
        if let Residual::Identity = block.residual {
            for (ov, &xv) in o.iter_mut().zip(&x[r * x_rs..r * x_rs + hidden]) {
                *ov += xv;
            }
        }
    }
    if let Residual::Proj(proj) = block.residual {
        S::gemm(rows, block.cin, hidden, x, (x_rs, 1), proj, (1, block.cin), S::one(), out, (out_rs, 1));
    }
}

pub(crate) fn forward<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    u: &Tensor<S>,
    state: &HiddenState<S>,
    teacher: Option<&Tensor<S>>,
) -> Result<(Tensor<S>, HiddenState<S>, TcnTape<S>)> {
    let (batch, len) = (u.dim(0), u.dim(1));
    let (hidden, k, o_dim) = (spec.hidden, spec.kernel, spec.output_dim);
    let blocks = blocks(spec, params)?;
    let head_w = params.get("head.W")?.data();
    let head_b = params.get("head.b")?.data();

    // Seed every block input with its carried context.
    let mut padded: Vec<Vec<S>> = blocks
        .iter()
        .zip(&state.layers)
        .map(|(blk, tail)| {
            let span = (blk.ctx + len) * blk.cin;
            let mut p = vec![S::zero(); batch * span];
            for b in 0..batch {
                let n = blk.ctx * blk.cin;
                p[b * span..b * span + n].copy_from_slice(&tail.data()[b * n..(b + 1) * n]);
            }
            p
        })
        .collect();
    let mut pre: Vec<Vec<S>> = blocks.iter().map(|_| vec![S::zero(); batch * len * hidden]).collect();
    let mut top = vec![S::zero(); batch * len * hidden];
    let mut y = vec![S::zero(); batch * len * o_dim];
    let mut last_output = None;

    if spec.is_ar() {
        let i_dim = spec.input_dim;
        let mut feedback = state
            .last_output
            .as_ref()
            .ok_or_else(|| Error::State("missing last_output".into()))?
            .data()
            .to_vec();
        for t in 0..len {
            {
                let blk = &blocks[0];
                let span = (blk.ctx + len) * blk.cin;
                for b in 0..batch {
                    let row = &mut padded[0][b * span + (blk.ctx + t) * blk.cin..b * span + (blk.ctx + t + 1) * blk.cin];
                    row[..i_dim].copy_from_slice(&u.data()[(b * len + t) * i_dim..(b * len + t + 1) * i_dim]);
                    row[i_dim..].copy_from_slice(&feedback[b * o_dim..(b + 1) * o_dim]);
                }
            }
            for (l, blk) in blocks.iter().enumerate() {
                let span = (blk.ctx + len) * blk.cin;
                let z = &mut pre[l][t * hidden..];
                for b in 0..batch {
                    z[b * len * hidden..b * len * hidden + hidden].copy_from_slice(blk.bias);
                }
                for j in 0..k {
                    let at = (blk.ctx - blk.shift(k, j) + t) * blk.cin;
                    S::gemm(
                        batch,
                        blk.cin,
                        hidden,
                        &padded[l][at..],
                        (span, 1),
                        &blk.kernel[j..],
                        blk.tap_strides(k),
                        S::one(),
                        z,
                        (len * hidden, 1),
                    );
                }
                let x_at = (blk.ctx + t) * blk.cin;
                if l + 1 < blocks.len() {
                    let next = &blocks[l + 1];
                    let next_span = (next.ctx + len) * next.cin;
                    let (lower, upper) = padded.split_at_mut(l + 1);
                    activate_rows(
                        batch,
                        hidden,
                        blk,
                        &pre[l][t * hidden..],
                        len * hidden,
                        &lower[l][x_at..],
                        span,
                        &mut upper[0][(next.ctx + t) * next.cin..],
                        next_span,
                    );
                } else {
                    activate_rows(
                        batch,
                        hidden,
                        blk,
                        &pre[l][t * hidden..],
                        len * hidden,
                        &padded[l][x_at..],
                        span,
                        &mut top[t * hidden..],
                        len * hidden,
                    );
                }
            }
            for b in 0..batch {
                let y_bt = &mut y[(b * len + t) * o_dim..(b * len + t + 1) * o_dim];
                y_bt.copy_from_slice(head_b);
                mm(1, hidden, o_dim, &top[(b * len + t) * hidden..(b * len + t + 1) * hidden], head_w, S::one(), y_bt);
            }
            for b in 0..batch {
                let src = match teacher {
                    Some(tt) => &tt.data()[(b * len + t) * o_dim..(b * len + t + 1) * o_dim],
                    None => &y[(b * len + t) * o_dim..(b * len + t + 1) * o_dim],
                };
                feedback[b * o_dim..(b + 1) * o_dim].copy_from_slice(src);
            }
        }
        last_output = Some(Tensor::from_vec(&[batch, o_dim], feedback)?);
    } else {
        {
            let blk = &blocks[0];
            let span = (blk.ctx + len) * blk.cin;
            let n = len * blk.cin;
            for b in 0..batch {
                padded[0][b * span + blk.ctx * blk.cin..(b + 1) * span].copy_from_slice(&u.data()[b * n..(b + 1) * n]);
            }
        }
        for (l, blk) in blocks.iter().enumerate() {
            let span = (blk.ctx + len) * blk.cin;
            let z = &mut pre[l];
            for row in z.chunks_exact_mut(hidden) {
                row.copy_from_slice(blk.bias);
            }
            for b in 0..batch {
                for j in 0..k {
                    let at = b * span + (blk.ctx - blk.shift(k, j)) * blk.cin;
                    S::gemm(
                        len,
                        blk.cin,
                        hidden,
                        &padded[l][at..],
                        (blk.cin, 1),
                        &blk.kernel[j..],
                        blk.tap_strides(k),
                        S::one(),
                        &mut z[b * len * hidden..],
                        (hidden, 1),
                    );
                }
            }
            for b in 0..batch {
                let x_at = b * span + blk.ctx * blk.cin;
                if l + 1 < blocks.len() {
                    let next = &blocks[l + 1];
                    let next_span = (next.ctx + len) * next.cin;
                    let (lower, upper) = padded.split_at_mut(l + 1);
                    activate_rows(
                        len,
                        hidden,
                        blk,
                        &pre[l][b * len * hidden..],
                        hidden,
                        &lower[l][x_at..],
                        blk.cin,
                        &mut upper[0][b * next_span + next.ctx * next.cin..],
                        next.cin,
                    );
                } else {
                    activate_rows(
                        len,
                        hidden,
                        blk,
                        &pre[l][b * len * hidden..],
                        hidden,
                        &padded[l][x_at..],
                        blk.cin,
                        &mut top[b * len * hidden..],
                        hidden,
                    );
                }
            }
        }
        for row in y.chunks_exact_mut(o_dim) {
            row.copy_from_slice(head_b);
        }
        mm(batch * len, hidden, o_dim, &top, head_w, S::one(), &mut y);
    }

    let layers = blocks
        .iter()
        .zip(&padded)
        .map(|(blk, p)| {
            let span = (blk.ctx + len) * blk.cin;
            let n = blk.ctx * blk.cin;
            let mut tail = Vec::with_capacity(batch * n);
            for b in 0..batch {
                tail.extend_from_slice(&p[b * span + len * blk.cin..(b + 1) * span]);
            }
            Tensor::from_vec(&[batch, blk.ctx, blk.cin], tail)
        })
        .collect::<Result<Vec<_>>>()?;
    let tape = TcnTape {
        batch,
        len,
        free_running: spec.is_ar() && teacher.is_none(),
        padded,
        pre,
        top,
    };
    Ok((Tensor::from_vec(&[batch, len, o_dim], y)?, HiddenState { layers, last_output }, tape))
}

pub(crate) fn backward<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    tape: &TcnTape<S>,
    grad_y: &Tensor<S>,
) -> Result<ParamStore<S>> {
    let (batch, len) = (tape.batch, tape.len);
    let (hidden, k, o_dim, depth) = (spec.hidden, spec.kernel, spec.output_dim, spec.depth);
    grad_y.expect_shape("tcn backward", &[batch, len, o_dim])?;
    let blocks = blocks(spec, params)?;
    let head_w = params.get("head.W")?.data();
    let bt = batch * len;

    let mut d_pre: Vec<Vec<S>> = (0..depth).map(|_| vec![S::zero(); bt * hidden]).collect();
    let mut d_out: Vec<Vec<S>> = d_pre.clone();
    let mut dy_total = grad_y.data().to_vec();

    if tape.free_running {
        // Reverse-time sweep: the gradient of output step t also arrives
        // through the feedback columns of the first block's input at t+1.
        let mut d_padded: Vec<Vec<S>> = blocks
            .iter()
            .map(|blk| vec![S::zero(); batch * (blk.ctx + len) * blk.cin])
            .collect();
        let i_dim = spec.input_dim;
        for t in (0..len).rev() {
            if t + 1 < len {
                let blk = &blocks[0];
                let span = (blk.ctx + len) * blk.cin;
                for b in 0..batch {
                    let src = &d_padded[0][b * span + (blk.ctx + t + 1) * blk.cin + i_dim..b * span + (blk.ctx + t + 2) * blk.cin];
                    for (d, &g) in dy_total[(b * len + t) * o_dim..(b * len + t + 1) * o_dim].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
            for b in 0..batch {
                let dy = &dy_total[(b * len + t) * o_dim..(b * len + t + 1) * o_dim];
                let dst = &mut d_out[depth - 1][(b * len + t) * hidden..(b * len + t + 1) * hidden];
                S::gemm(1, o_dim, hidden, dy, (o_dim, 1), head_w, (1, o_dim), S::zero(), dst, (hidden, 1));
            }
            for l in (0..depth).rev() {
                let blk = &blocks[l];
                let span = (blk.ctx + len) * blk.cin;
                if l + 1 < depth {
                    let next = &blocks[l + 1];
                    let next_span = (next.ctx + len) * next.cin;
                    for b in 0..batch {
                        let src = &d_padded[l + 1][b * next_span + (next.ctx + t) * next.cin..][..hidden];
                        d_out[l][(b * len + t) * hidden..(b * len + t + 1) * hidden].copy_from_slice(src);
                    }
                }
                for b in 0..batch {
                    let r = (b * len + t) * hidden;
                    for i in r..r + hidden {
                        d_pre[l][i] = if tape.pre[l][i] > S::zero() { d_out[l][i] } else { S::zero() };
                    }
                }
                let x_at = (blk.ctx + t) * blk.cin;
                match blk.residual {
                    Residual::None => {}
                    Residual::Identity => {
                        for b in 0..batch {
                            let src = &d_out[l][(b * len + t) * hidden..(b * len + t + 1) * hidden];
                            for (d, &g) in d_padded[l][b * span + x_at..][..hidden].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                    Residual::Proj(proj) => S::gemm(
                        batch,
                        hidden,
                        blk.cin,
                        &d_out[l][t * hidden..],
                        (len * hidden, 1),
                        proj,
                        (blk.cin, 1),
                        S::one(),
                        &mut d_padded[l][x_at..],
                        (span, 1),
                    ),
                }
                for j in 0..k {
                    let at = (blk.ctx - blk.shift(k, j) + t) * blk.cin;
                    S::gemm(
                        batch,
                        hidden,
                        blk.cin,
                        &d_pre[l][t * hidden..],
                        (len * hidden, 1),
                        &blk.kernel[j..],
                        blk.tap_t_strides(k),
                        S::one(),
                        &mut d_padded[l][at..],
                        (span, 1),
                    );
                }
            }
        }
    } else {
        mm_nt_rows(bt, o_dim, hidden, &dy_total, head_w, &mut d_out[depth - 1]);
        for l in (0..depth).rev() {
            let blk = &blocks[l];
            for i in 0..bt * hidden {
                d_pre[l][i] = if tape.pre[l][i] > S::zero() { d_out[l][i] } else { S::zero() };
            }
            if l == 0 {
                break;
            }
            let span = (blk.ctx + len) * blk.cin;
            let mut d_padded = vec![S::zero(); batch * span];
            for b in 0..batch {
                for j in 0..k {
                    let at = b * span + (blk.ctx - blk.shift(k, j)) * blk.cin;
                    S::gemm(
                        len,
                        hidden,
                        blk.cin,
                        &d_pre[l][b * len * hidden..],
                        (hidden, 1),
                        &blk.kernel[j..],
                        blk.tap_t_strides(k),
                        S::one(),
                        &mut d_padded[at..],
                        (blk.cin, 1),
                    );
                }
            }
            let (lower, upper) = d_out.split_at_mut(l);
            let d_below = &mut lower[l - 1];
            let d_here = &upper[0];
            for b in 0..batch {
                d_below[b * len * hidden..(b + 1) * len * hidden]
                    .copy_from_slice(&d_padded[b * span + blk.ctx * blk.cin..(b + 1) * span]);
            }
            match blk.residual {
                Residual::None => {}
                Residual::Identity => d_below.iter_mut().zip(d_here).for_each(|(d, &g)| *d += g),
                Residual::Proj(proj) => {
                    S::gemm(bt, hidden, blk.cin, d_here, (hidden, 1), proj, (blk.cin, 1), S::one(), d_below, (blk.cin, 1))
                }
            }
        }
    }

    let mut grads = params.zeros_like();
    for (l, blk) in blocks.iter().enumerate() {
        let span = (blk.ctx + len) * blk.cin;
        {
            let gk = grads.get_mut(&format!("tcn.{l}.kernel"))?.data_mut();
            for b in 0..batch {
                for j in 0..k {
                    let at = b * span + (blk.ctx - blk.shift(k, j)) * blk.cin;
                    S::gemm(
                        blk.cin,
                        len,
                        hidden,
                        &tape.padded[l][at..],
                        (1, blk.cin),
                        &d_pre[l][b * len * hidden..],
                        (hidden, 1),
                        S::one(),
                        &mut gk[j..],
                        blk.tap_strides(k),
                    );
                }
            }
        }
        column_sums(&d_pre[l], hidden, grads.get_mut(&format!("tcn.{l}.bias"))?.data_mut());
        if let Residual::Proj(_) = blk.residual {
            let gp = grads.get_mut(&format!("tcn.{l}.proj"))?.data_mut();
            for b in 0..batch {
                S::gemm(
                    blk.cin,
                    len,
                    hidden,
                    &tape.padded[l][b * span + blk.ctx * blk.cin..],
                    (1, blk.cin),
                    &d_out[l][b * len * hidden..],
                    (hidden, 1),
                    S::one(),
                    gp,
                    (1, blk.cin),
                );
            }
        }
    }
    mm_tn(hidden, bt, o_dim, &tape.top, &dy_total, S::zero(), grads.get_mut("head.W")?.data_mut());
    column_sums(&dy_total, o_dim, grads.get_mut("head.b")?.data_mut());
    Ok(grads)
}

/// `c ← a·bᵀ` for `a: m×k`, `b: n×k`.
fn mm_nt_rows<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    crate::numkit::mm_nt(m, k, n, a, b, S::zero(), c);
}
