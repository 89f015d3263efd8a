//! Dense row-major arrays and the handful of differentiable primitives the
//! sequence models are built from. Every forward has a matching hand-written
//! backward; there is no autodiff graph.
//!
//! Shapes are explicit everywhere and nothing broadcasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::dim("from_vec", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| S::of(x)).collect())
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(op, &self.shape, shape));
        }
        Ok(())
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: S) {
        let at = self.offset(index);
        self.data[at] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut at = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            at = at * d + i;
        }
        at
    }

    /// Explicit finiteness check; arrays never silently reject NaN or Inf.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        if self.shape != other.shape {
            return Err(Error::dim("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.shape != other.shape {
            return Err(Error::dim("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    /// Swaps the two trailing axes of a rank-3 array (`B×T×C` ↔ `B×C×T`).
    pub fn swap_last_two(&self) -> Result<Self> {
        if self.ndim() != 3 {
            return Err(Error::dim("swap_last_two", &self.shape, &[0, 0, 0]));
        }
        let (b, n, m) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = Self::zeros(&[b, m, n]);
        for bi in 0..b {
            for i in 0..n {
                for j in 0..m {
                    out.data[(bi * m + j) * n + i] = self.data[(bi * n + i) * m + j];
                }
            }
        }
        Ok(out)
    }

    /// Rows `[start, end)` of axis 1 of a rank-3 array.
    pub fn slice_axis1(&self, start: usize, end: usize) -> Result<Self> {
        if self.ndim() != 3 || start > end || end > self.shape[1] {
            return Err(Error::dim("slice_axis1", &self.shape, &[start, end]));
        }
        let (b, t, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut data = Vec::with_capacity(b * (end - start) * c);
        for bi in 0..b {
            data.extend_from_slice(&self.data[(bi * t + start) * c..(bi * t + end) * c]);
        }
        Self::from_vec(&[b, end - start, c], data)
    }

    /// Concatenates rank-3 arrays along axis 1.
    pub fn concat_axis1(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero arrays".into()))?;
        let (b, c) = (first.shape[0], first.shape[2]);
        let mut total = 0;
        for p in parts {
            if p.ndim() != 3 || p.shape[0] != b || p.shape[2] != c {
                return Err(Error::dim("concat_axis1", &first.shape, &p.shape));
            }
            total += p.shape[1];
        }
        let mut data = Vec::with_capacity(b * total * c);
        for bi in 0..b {
            for p in parts {
                let t = p.shape[1];
                data.extend_from_slice(&p.data[bi * t * c..(bi + 1) * t * c]);
            }
        }
        Self::from_vec(&[b, total, c], data)
    }
}

/// A value together with the gradient of some scalar loss with respect to it.
#[derive(Clone, Debug)]
pub struct GradPair<S: Scalar> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> GradPair<S> {
    pub fn new(value: Tensor<S>, grad: Tensor<S>) -> Result<Self> {
        if value.shape() != grad.shape() {
            return Err(Error::dim("grad_pair", value.shape(), grad.shape()));
        }
        Ok(Self { value, grad })
    }
}

// ---------------------------------------------------------------------------
// Slice-level matrix products (row-major, contiguous).

/// `c ← beta·c + a·b`, `a: m×k`, `b: k×n`.
pub(crate) fn mm<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    S::gemm(m, k, n, a, (k, 1), b, (n, 1), beta, c, (n, 1));
}

/// `c ← beta·c + aᵀ·b`, `a: k×m` (stored), `b: k×n`.
pub(crate) fn mm_tn<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) {
    S::gemm(m, k, n, a, (1, m), b, (n, 1), beta, c, (n, 1));
}

/// `c ← beta·c + a·bᵀ`, `a: m×k`, `b: n×k` (stored).
pub(crate) fn mm_nt<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) {
    S::gemm(m, k, n, a, (k, 1), b, (1, k), beta, c, (n, 1));
}

// ---------------------------------------------------------------------------
// Affine map.

pub struct AffineGrads<S: Scalar> {
    pub x: Tensor<S>,
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

fn affine_dims<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    if x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) {
        return Err(Error::dim("affine", x.shape(), w.shape()));
    }
    if b.shape() != [w.dim(1)] {
        return Err(Error::dim("affine", w.shape(), b.shape()));
    }
    Ok((x.dim(0), x.dim(1), w.dim(1)))
}

/// `out[b,o] = Σ_i x[b,i]·w[i,o] + bias[o]`.
pub fn affine<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (rows, inner, cols) = affine_dims(x, w, bias)?;
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        out.data[r * cols..(r + 1) * cols].copy_from_slice(bias.data());
    }
    mm(rows, inner, cols, x.data(), w.data(), S::one(), &mut out.data);
    Ok(out)
}

pub fn affine_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<AffineGrads<S>> {
    let (rows, inner, cols) = affine_dims(x, w, &Tensor::zeros(&[w.dim(1)]))?;
    grad_out.expect_shape("affine_backward", &[rows, cols])?;
    let mut gx = Tensor::zeros(&[rows, inner]);
    mm_nt(rows, cols, inner, grad_out.data(), w.data(), S::zero(), &mut gx.data);
    let mut gw = Tensor::zeros(&[inner, cols]);
    mm_tn(inner, rows, cols, x.data(), grad_out.data(), S::zero(), &mut gw.data);
    let mut gb = Tensor::zeros(&[cols]);
    for r in 0..rows {
        for (acc, &g) in gb.data.iter_mut().zip(&grad_out.data[r * cols..(r + 1) * cols]) {
            *acc += g;
        }
    }
    Ok(AffineGrads { x: gx, w: gw, b: gb })
}

// ---------------------------------------------------------------------------
// Dilated causal convolution, channels-first layout `B×C×T`.

fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    dilation: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if dilation == 0 {
        return Err(Error::Parameter("dilation must be positive".into()));
    }
    if x.ndim() != 3 || k.ndim() != 3 || x.dim(1) != k.dim(1) {
        return Err(Error::dim("causal_conv1d", x.shape(), k.shape()));
    }
    if k.dim(2) == 0 {
        return Err(Error::Parameter("kernel size must be positive".into()));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2), k.dim(0), k.dim(2)))
}

/// `out[b,c,t] = Σ_{j,ci} k[c,ci,j]·x[b,ci,t − dilation·(K−1−j)]`, reading
/// zeros left of `t = 0`.
pub fn causal_conv1d<S: Scalar>(x: &Tensor<S>, k: &Tensor<S>, dilation: usize) -> Result<Tensor<S>> {
    let (batch, cin, len, cout, ks) = conv_dims(x, k, dilation)?;
    let mut out = Tensor::zeros(&[batch, cout, len]);
    for b in 0..batch {
        for c in 0..cout {
            let orow = &mut out.data[(b * cout + c) * len..(b * cout + c + 1) * len];
            for ci in 0..cin {
                let xrow = &x.data[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                for j in 0..ks {
                    let w = k.data[(c * cin + ci) * ks + j];
                    let shift = dilation * (ks - 1 - j);
                    if shift >= len {
                        continue;
                    }
                    for (o, &xv) in orow[shift..].iter_mut().zip(xrow) {
                        *o += w * xv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_k)`.
pub fn causal_conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    dilation: usize,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (batch, cin, len, cout, ks) = conv_dims(x, k, dilation)?;
    grad_out.expect_shape("causal_conv1d_backward", &[batch, cout, len])?;
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    for b in 0..batch {
        for c in 0..cout {
            let grow = &grad_out.data[(b * cout + c) * len..(b * cout + c + 1) * len];
            for ci in 0..cin {
                let xoff = (b * cin + ci) * len;
                for j in 0..ks {
                    let shift = dilation * (ks - 1 - j);
                    if shift >= len {
                        continue;
                    }
                    let kidx = (c * cin + ci) * ks + j;
                    let w = k.data[kidx];
                    let mut acc = S::zero();
                    for (t, &g) in grow[shift..].iter().enumerate() {
                        acc += g * x.data[xoff + t];
                        gx.data[xoff + t] += g * w;
                    }
                    gk.data[kidx] += acc;
                }
            }
        }
    }
    Ok((gx, gk))
}

// ---------------------------------------------------------------------------
// Elementwise activations.

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Backward from the forward *output* `y = sigmoid(x)`.
pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    zip_grad("sigmoid_backward", y, grad_out, |y, g| g * y * (S::one() - y))
}

pub fn tanh<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(S::tanh)
}

/// Backward from the forward *output* `y = tanh(x)`.
pub fn tanh_backward<S: Scalar>(y: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    zip_grad("tanh_backward", y, grad_out, |y, g| g * (S::one() - y * y))
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.max(S::zero()))
}

/// Backward from the forward *input*; the subgradient at zero is zero.
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    zip_grad("relu_backward", x, grad_out, |x, g| {
        if x > S::zero() {
            g
        } else {
            S::zero()
        }
    })
}

fn zip_grad<S: Scalar>(
    op: &'static str,
    saved: &Tensor<S>,
    grad_out: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if saved.shape() != grad_out.shape() {
        return Err(Error::dim(op, saved.shape(), grad_out.shape()));
    }
    Ok(Tensor {
        shape: saved.shape.clone(),
        data: saved
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&s, &g)| f(s, g))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Gradient checking.

/// Denominator floor of the relative error, so that entries whose true
/// gradient is (near) zero are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient of a scalar function against central
/// finite differences and returns the worst relative error over all input
/// elements.
///
/// `f` maps the inputs to `(loss, d loss / d input_i)`. Each input element is
/// perturbed by `±eps` in turn.
pub fn grad_check<S, F>(inputs: &[Tensor<S>], eps: S, f: F) -> Result<S>
where
    S: Scalar,
    F: Fn(&[Tensor<S>]) -> Result<(S, Vec<Tensor<S>>)>,
{
    if eps <= S::zero() {
        return Err(Error::Parameter("grad_check eps must be positive".into()));
    }
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Input(format!(
            "grad_check: {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let pairs = inputs
        .iter()
        .cloned()
        .zip(analytic)
        .map(|(v, g)| GradPair::new(v, g))
        .collect::<Result<Vec<_>>>()?;

    let floor = S::of(GRAD_CHECK_FLOOR);
    let two = S::of(2.0);
    let mut probe: Vec<Tensor<S>> = inputs.to_vec();
    let mut worst = S::zero();
    for (i, pair) in pairs.iter().enumerate() {
        for e in 0..pair.value.len() {
            let orig = pair.value.data[e];
            probe[i].data[e] = orig + eps;
            let (plus, _) = f(&probe)?;
            probe[i].data[e] = orig - eps;
            let (minus, _) = f(&probe)?;
            probe[i].data[e] = orig;
            let numeric = (plus - minus) / (two * eps);
            let exact = pair.grad.data[e];
            let denom = exact.abs().max(numeric.abs()).max(floor);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn affine_identity_and_direct() {
        let y = affine(&t(&[1, 2], &[1., 2.]), &t(&[2, 2], &[1., 0., 0., 1.]), &t(&[2], &[0., 0.])).unwrap();
        assert_eq!(y.data(), &[1., 2.]);
        let y = affine(&t(&[1, 2], &[1., 1.]), &t(&[2, 2], &[2., 3., 4., 5.]), &t(&[2], &[1., 1.])).unwrap();
        assert_eq!(y.data(), &[7., 9.]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(&t(&[1, 3], &[1., 2., 3.]), &t(&[2, 2], &[0.; 4]), &t(&[2], &[0.; 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn causal_conv_examples() {
        let x = t(&[1, 1, 4], &[1., 2., 3., 4.]);
        let k = t(&[1, 1, 2], &[1., 1.]);
        assert_eq!(causal_conv1d(&x, &k, 1).unwrap().data(), &[1., 3., 5., 7.]);
        assert_eq!(causal_conv1d(&x, &k, 2).unwrap().data(), &[1., 2., 4., 6.]);
        assert!(matches!(causal_conv1d(&x, &k, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn activations_at_zero() {
        let z = t(&[1], &[0.]);
        assert_eq!(sigmoid(&z).data(), &[0.5]);
        assert_eq!(tanh(&z).data(), &[0.]);
        assert_eq!(relu(&t(&[2], &[-3., 0.])).data(), &[0., 0.]);
    }

    #[test]
    fn grad_check_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[3, 4]);
        let r = random(&mut rng, &[3, 4]);
        let err = grad_check(&[x], 1e-5, |inp| Ok((inp[0].dot(&r)?, vec![r.clone()]))).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert!(grad_check(&[x], 0.0, |_| Ok((0.0, vec![Tensor::zeros(&[1])]))).is_err());
    }

    #[test]
    fn grad_check_detects_wrong_gradient() {
        let x = t(&[2], &[0.3, -0.7]);
        let err = grad_check(&[x], 1e-5, |inp| {
            let v = inp[0].data();
            Ok((v[0] * v[0] + v[1], vec![t(&[2], &[v[0], 1.0])]))
        })
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn check_finite_flags_nan() {
        let x = t(&[2], &[1.0, f64::NAN]);
        assert!(matches!(x.check_finite("x"), Err(Error::NonFinite(_))));
    }

    #[test]
    fn swap_and_slice_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[2, 5, 3]);
        assert_eq!(x.swap_last_two().unwrap().swap_last_two().unwrap(), x);
        let a = x.slice_axis1(0, 2).unwrap();
        let b = x.slice_axis1(2, 5).unwrap();
        assert_eq!(Tensor::concat_axis1(&[&a, &b]).unwrap(), x);
    }
}
