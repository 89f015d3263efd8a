//! Stacked GRU with a linear head.
//!
//! Gate equations (per layer, `∘` elementwise):
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! ĥ  = tanh(x·Wh + (r∘h)·Uh + bh)
//! h' = (1 − z)∘h + z∘ĥ
//! ```
//!
//! Internally every sequence array is time-major (`T×B×C`) so that one step
//! is a contiguous `B×C` block. The NAR forward runs layer by layer and
//! computes the input projections of all steps in a single product; the AR
//! forward has to interleave layers step by step because of the feedback.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ForwardOpts, HiddenState, ModelSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numkit::{mm, mm_nt, mm_tn, sigmoid_scalar, Tensor};
use crate::scalar::Scalar;

pub(crate) struct GruTape<S: Scalar> {
    batch: usize,
    len: usize,
    free_running: bool,
    /// Layer inputs, `T×B×C_l` (after dropout for `l > 0`).
    xs: Vec<Vec<S>>,
    /// Hidden states including the initial one, `(T+1)×B×H`.
    hs: Vec<Vec<S>>,
    zs: Vec<Vec<S>>,
    rs: Vec<Vec<S>>,
    cands: Vec<Vec<S>>,
    /// Dropout scale factors applied to the input of layer `l > 0`.
    masks: Vec<Option<Vec<S>>>,
}

struct LayerWeights<'a, S: Scalar> {
    w: [&'a [S]; 3],
    u: [&'a [S]; 3],
    b: [&'a [S]; 3],
}

fn layer_weights<'a, S: Scalar>(params: &'a ParamStore<S>, l: usize) -> Result<LayerWeights<'a, S>> {
    let g = |kind: &str, gate: &str| -> Result<&'a [S]> {
        Ok(params.get(&format!("gru.{l}.{kind}{gate}"))?.data())
    };
    Ok(LayerWeights {
        w: [g("W", "z")?, g("W", "r")?, g("W", "h")?],
        u: [g("U", "z")?, g("U", "r")?, g("U", "h")?],
        b: [g("b", "z")?, g("b", "r")?, g("b", "h")?],
    })
}

/// `B×T×C` → `T×B×C`.
fn to_time_major<S: Scalar>(x: &[S], batch: usize, len: usize, width: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for b in 0..batch {
        for t in 0..len {
            out[(t * batch + b) * width..(t * batch + b + 1) * width]
                .copy_from_slice(&x[(b * len + t) * width..(b * len + t + 1) * width]);
        }
    }
    out
}

fn to_batch_major<S: Scalar>(x: &[S], batch: usize, len: usize, width: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for t in 0..len {
        for b in 0..batch {
            out[(b * len + t) * width..(b * len + t + 1) * width]
                .copy_from_slice(&x[(t * batch + b) * width..(t * batch + b + 1) * width]);
        }
    }
    out
}

/// Fills `rows` consecutive rows of width `bias.len()` with `bias`.
fn fill_rows<S: Scalar>(dst: &mut [S], bias: &[S]) {
    for row in dst.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn dropout_mask<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<S> {
    let keep = S::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
        .collect()
}

/// Completes one recurrent step. On entry `z`, `r`, `c` hold the input
/// projections plus biases; on exit they hold the gate activations and the
/// candidate state, and `h_out` the new hidden state.
#[allow(clippy::too_many_arguments)]
fn recurrent_step<S: Scalar>(
    batch: usize,
    hidden: usize,
    hp: &[S],
    wts: &LayerWeights<'_, S>,
    z: &mut [S],
    r: &mut [S],
    c: &mut [S],
    rh: &mut [S],
    h_out: &mut [S],
) {
    mm(batch, hidden, hidden, hp, wts.u[0], S::one(), z);
    mm(batch, hidden, hidden, hp, wts.u[1], S::one(), r);
    z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    for ((o, &rv), &h) in rh.iter_mut().zip(r.iter()).zip(hp) {
        *o = rv * h;
    }
    mm(batch, hidden, hidden, rh, wts.u[2], S::one(), c);
    c.iter_mut().for_each(|v| *v = v.tanh());
    for i in 0..batch * hidden {
        h_out[i] = (S::one() - z[i]) * hp[i] + z[i] * c[i];
    }
}

pub(crate) fn forward<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    u: &Tensor<S>,
    state: &HiddenState<S>,
    mut opts: ForwardOpts<'_, S>,
) -> Result<(Tensor<S>, HiddenState<S>, GruTape<S>)> {
    let (batch, len) = (u.dim(0), u.dim(1));
    let (hidden, depth, o_dim) = (spec.hidden, spec.depth, spec.output_dim);
    let bh = batch * hidden;
    let step_len = len * bh;

    let mut tape = GruTape {
        batch,
        len,
        free_running: spec.is_ar() && opts.teacher.is_none(),
        xs: (0..depth)
            .map(|l| vec![S::zero(); len * batch * spec.layer_input_width(l)])
            .collect(),
        hs: Vec::with_capacity(depth),
        zs: Vec::with_capacity(depth),
        rs: Vec::with_capacity(depth),
        cands: Vec::with_capacity(depth),
        masks: vec![None; depth],
    };
    for l in 0..depth {
        let mut h = vec![S::zero(); (len + 1) * bh];
        h[..bh].copy_from_slice(state.layers[l].data());
        tape.hs.push(h);
        tape.zs.push(vec![S::zero(); step_len]);
        tape.rs.push(vec![S::zero(); step_len]);
        tape.cands.push(vec![S::zero(); step_len]);
    }
    let drop = spec.dropout > 0.0 && depth > 1;
    if drop {
        if let Some(rng) = opts.dropout_rng.as_deref_mut() {
            for l in 1..depth {
                tape.masks[l] = Some(dropout_mask(rng, step_len, spec.dropout));
            }
        }
    }

    let head_w = params.get("head.W")?.data();
    let head_b = params.get("head.b")?.data();
    let weights = (0..depth)
        .map(|l| layer_weights(params, l))
        .collect::<Result<Vec<_>>>()?;
    let mut rh = vec![S::zero(); bh];
    let mut y_tm = vec![S::zero(); len * batch * o_dim];
    let mut last_output = None;

    if spec.is_ar() {
        let i_dim = spec.input_dim;
        let width = spec.effective_input();
        let u_tm = to_time_major(u.data(), batch, len, i_dim);
        let teacher_tm = opts
            .teacher
            .map(|t| to_time_major(t.data(), batch, len, o_dim));
        let mut feedback = state
            .last_output
            .as_ref()
            .ok_or_else(|| Error::State("missing last_output".into()))?
            .data()
            .to_vec();
        for t in 0..len {
            {
                let x0 = &mut tape.xs[0][t * batch * width..(t + 1) * batch * width];
                for b in 0..batch {
                    x0[b * width..b * width + i_dim]
                        .copy_from_slice(&u_tm[(t * batch + b) * i_dim..(t * batch + b + 1) * i_dim]);
                    x0[b * width + i_dim..(b + 1) * width]
                        .copy_from_slice(&feedback[b * o_dim..(b + 1) * o_dim]);
                }
            }
            for l in 0..depth {
                let cin = spec.layer_input_width(l);
                let wts = &weights[l];
                let s = t * bh..(t + 1) * bh;
                let (z, r, c) = (&mut tape.zs[l][s.clone()], &mut tape.rs[l][s.clone()], &mut tape.cands[l][s]);
                let x = &tape.xs[l][t * batch * cin..(t + 1) * batch * cin];
                for (dst, g) in [(&mut *z, 0), (&mut *r, 1), (&mut *c, 2)] {
                    fill_rows(dst, wts.b[g]);
                    mm(batch, cin, hidden, x, wts.w[g], S::one(), dst);
                }
                let (prev, next) = tape.hs[l].split_at_mut((t + 1) * bh);
                recurrent_step(batch, hidden, &prev[t * bh..], wts, z, r, c, &mut rh, &mut next[..bh]);
                if l + 1 < depth {
                    let h_new = &tape.hs[l][(t + 1) * bh..(t + 2) * bh];
                    let dst = &mut tape.xs[l + 1][t * bh..(t + 1) * bh];
                    match &tape.masks[l + 1] {
                        Some(m) => {
                            for ((d, &h), &mk) in dst.iter_mut().zip(h_new).zip(&m[t * bh..(t + 1) * bh]) {
                                *d = h * mk;
                            }
                        }
                        None => dst.copy_from_slice(h_new),
                    }
                }
            }
            let y_t = &mut y_tm[t * batch * o_dim..(t + 1) * batch * o_dim];
            fill_rows(y_t, head_b);
            mm(batch, hidden, o_dim, &tape.hs[depth - 1][(t + 1) * bh..(t + 2) * bh], head_w, S::one(), y_t);
            match &teacher_tm {
                Some(tt) => feedback.copy_from_slice(&tt[t * batch * o_dim..(t + 1) * batch * o_dim]),
                None => feedback.copy_from_slice(y_t),
            }
        }
        last_output = Some(Tensor::from_vec(&[batch, o_dim], feedback)?);
    } else {
        tape.xs[0] = to_time_major(u.data(), batch, len, spec.input_dim);
        let rows = len * batch;
        for l in 0..depth {
            let cin = spec.layer_input_width(l);
            let wts = &weights[l];
            {
                let x = &tape.xs[l];
                for (dst, g) in [(&mut tape.zs[l], 0), (&mut tape.rs[l], 1), (&mut tape.cands[l], 2)] {
                    fill_rows(dst, wts.b[g]);
                    mm(rows, cin, hidden, x, wts.w[g], S::one(), dst);
                }
            }
            for t in 0..len {
                let s = t * bh..(t + 1) * bh;
                let (prev, next) = tape.hs[l].split_at_mut((t + 1) * bh);
                recurrent_step(
                    batch,
                    hidden,
                    &prev[t * bh..],
                    wts,
                    &mut tape.zs[l][s.clone()],
                    &mut tape.rs[l][s.clone()],
                    &mut tape.cands[l][s],
                    &mut rh,
                    &mut next[..bh],
                );
            }
            if l + 1 < depth {
                let mut x_next = tape.hs[l][bh..].to_vec();
                if let Some(m) = &tape.masks[l + 1] {
                    x_next.iter_mut().zip(m).for_each(|(x, &mk)| *x *= mk);
                }
                tape.xs[l + 1] = x_next;
            }
        }
        fill_rows(&mut y_tm, head_b);
        mm(rows, hidden, o_dim, &tape.hs[depth - 1][bh..], head_w, S::one(), &mut y_tm);
    }

    let y = Tensor::from_vec(&[batch, len, o_dim], to_batch_major(&y_tm, batch, len, o_dim))?;
    let layers = tape
        .hs
        .iter()
        .map(|h| Tensor::from_vec(&[batch, hidden], h[len * bh..].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((y, HiddenState { layers, last_output }, tape))
}

pub(crate) fn backward<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    tape: &GruTape<S>,
    grad_y: &Tensor<S>,
) -> Result<ParamStore<S>> {
    let (batch, len) = (tape.batch, tape.len);
    let (hidden, depth, o_dim) = (spec.hidden, spec.depth, spec.output_dim);
    grad_y.expect_shape("gru backward", &[batch, len, o_dim])?;
    let bh = batch * hidden;
    let rows = len * batch;
    let head_w = params.get("head.W")?.data();
    let weights = (0..depth)
        .map(|l| layer_weights(params, l))
        .collect::<Result<Vec<_>>>()?;

    let gy_tm = to_time_major(grad_y.data(), batch, len, o_dim);
    // Total gradient reaching each output step, including the feedback path.
    let mut dy_total = vec![S::zero(); rows * o_dim];
    let mut daz: Vec<Vec<S>> = (0..depth).map(|_| vec![S::zero(); rows * hidden]).collect();
    let mut dar = daz.clone();
    let mut dah = daz.clone();

    let mut dh_carry: Vec<Vec<S>> = (0..depth).map(|_| vec![S::zero(); bh]).collect();
    let mut dh = vec![S::zero(); bh];
    let mut dhp = vec![S::zero(); bh];
    let mut drh = vec![S::zero(); bh];
    let mut dz = vec![S::zero(); bh];
    let mut from_above = vec![S::zero(); bh];
    let width0 = spec.effective_input();
    let mut dx0 = vec![S::zero(); batch * width0];
    let mut dx_hidden = vec![S::zero(); bh];
    let mut fb_grad = vec![S::zero(); batch * o_dim];
    let i_dim = spec.input_dim;

    for t in (0..len).rev() {
        let dy = &mut dy_total[t * batch * o_dim..(t + 1) * batch * o_dim];
        dy.copy_from_slice(&gy_tm[t * batch * o_dim..(t + 1) * batch * o_dim]);
        if tape.free_running {
            dy.iter_mut().zip(&fb_grad).for_each(|(a, &g)| *a += g);
        }
        // dh_top = dy · Wheadᵀ
        mm_nt(batch, o_dim, hidden, dy, head_w, S::zero(), &mut from_above);

        for l in (0..depth).rev() {
            let wts = &weights[l];
            let s = t * bh..(t + 1) * bh;
            let hp = &tape.hs[l][t * bh..(t + 1) * bh];
            let (z, r, c) = (&tape.zs[l][s.clone()], &tape.rs[l][s.clone()], &tape.cands[l][s.clone()]);
            for i in 0..bh {
                dh[i] = dh_carry[l][i] + from_above[i];
            }
            let (daz_t, dar_t, dah_t) = (&mut daz[l][s.clone()], &mut dar[l][s.clone()], &mut dah[l][s]);
            for i in 0..bh {
                dz[i] = dh[i] * (c[i] - hp[i]);
                dah_t[i] = dh[i] * z[i] * (S::one() - c[i] * c[i]);
                dhp[i] = dh[i] * (S::one() - z[i]);
            }
            mm_nt(batch, hidden, hidden, dah_t, wts.u[2], S::zero(), &mut drh);
            for i in 0..bh {
                dar_t[i] = drh[i] * hp[i] * r[i] * (S::one() - r[i]);
                dhp[i] += drh[i] * r[i];
                daz_t[i] = dz[i] * z[i] * (S::one() - z[i]);
            }
            mm_nt(batch, hidden, hidden, daz_t, wts.u[0], S::one(), &mut dhp);
            mm_nt(batch, hidden, hidden, dar_t, wts.u[1], S::one(), &mut dhp);
            dh_carry[l].copy_from_slice(&dhp);

            let need_dx = l > 0 || tape.free_running;
            if need_dx {
                let cin = spec.layer_input_width(l);
                let dx = if l > 0 { &mut dx_hidden[..] } else { &mut dx0[..] };
                mm_nt(batch, hidden, cin, daz_t, wts.w[0], S::zero(), dx);
                mm_nt(batch, hidden, cin, dar_t, wts.w[1], S::one(), dx);
                mm_nt(batch, hidden, cin, dah_t, wts.w[2], S::one(), dx);
                if l > 0 {
                    match &tape.masks[l] {
                        Some(m) => {
                            for i in 0..bh {
                                from_above[i] = dx[i] * m[t * bh + i];
                            }
                        }
                        None => from_above.copy_from_slice(dx),
                    }
                } else {
                    for b in 0..batch {
                        fb_grad[b * o_dim..(b + 1) * o_dim]
                            .copy_from_slice(&dx[b * width0 + i_dim..(b + 1) * width0]);
                    }
                }
            }
        }
    }

    let mut grads = params.zeros_like();
    for l in 0..depth {
        let cin = spec.layer_input_width(l);
        let x = &tape.xs[l];
        let hprev = &tape.hs[l][..rows * hidden];
        let rh: Vec<S> = tape.rs[l].iter().zip(hprev).map(|(&r, &h)| r * h).collect();
        for (g, (dpre, hin)) in ["z", "r", "h"]
            .iter()
            .zip([(&daz[l], hprev), (&dar[l], hprev), (&dah[l], &rh[..])])
        {
            mm_tn(cin, rows, hidden, x, dpre, S::zero(), grads.get_mut(&format!("gru.{l}.W{g}"))?.data_mut());
            mm_tn(hidden, rows, hidden, hin, dpre, S::zero(), grads.get_mut(&format!("gru.{l}.U{g}"))?.data_mut());
            column_sums(dpre, hidden, grads.get_mut(&format!("gru.{l}.b{g}"))?.data_mut());
        }
    }
    let top = &tape.hs[depth - 1][bh..];
    mm_tn(hidden, rows, o_dim, top, &dy_total, S::zero(), grads.get_mut("head.W")?.data_mut());
    column_sums(&dy_total, o_dim, grads.get_mut("head.b")?.data_mut());
    Ok(grads)
}

pub(crate) fn column_sums<S: Scalar>(x: &[S], width: usize, out: &mut [S]) {
    out.iter_mut().for_each(|v| *v = S::zero());
    for row in x.chunks_exact(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// One step of GRU layer `layer`: `x_t: B×C_l`, `h_prev: B×H` → `h_t: B×H`.
pub fn gru_cell<S: Scalar>(
    params: &ParamStore<S>,
    layer: usize,
    x_t: &Tensor<S>,
    h_prev: &Tensor<S>,
) -> Result<Tensor<S>> {
    let wts = layer_weights(params, layer)?;
    let hidden = wts.b[0].len();
    if x_t.ndim() != 2 || h_prev.ndim() != 2 || x_t.dim(0) != h_prev.dim(0) || h_prev.dim(1) != hidden {
        return Err(Error::dim("gru_cell", x_t.shape(), h_prev.shape()));
    }
    let (batch, cin) = (x_t.dim(0), x_t.dim(1));
    if wts.w[0].len() != cin * hidden {
        return Err(Error::dim("gru_cell", x_t.shape(), params.get(&format!("gru.{layer}.Wz"))?.shape()));
    }
    let bh = batch * hidden;
    let mut gates: Vec<Vec<S>> = (0..3).map(|_| vec![S::zero(); bh]).collect();
    for (g, dst) in gates.iter_mut().enumerate() {
        fill_rows(dst, wts.b[g]);
        mm(batch, cin, hidden, x_t.data(), wts.w[g], S::one(), dst);
    }
    let mut rh = vec![S::zero(); bh];
    let mut h = vec![S::zero(); bh];
    let [z, r, c] = &mut gates[..] else { unreachable!() };
    recurrent_step(batch, hidden, h_prev.data(), &wts, z, r, c, &mut rh, &mut h);
    Tensor::from_vec(&[batch, hidden], h)
}
