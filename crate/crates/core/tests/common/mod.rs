#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysid::models::{ForwardOpts, Model, ModelSpec, ParamStore};
use sysid::numkit::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn params_to_vec(p: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    p.iter().map(|(_, t)| t.clone()).collect()
}

pub fn params_from_vec(template: &ParamStore<f64>, tensors: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for ((name, _), t) in template.iter().zip(tensors) {
        out.insert(name, t.clone()).unwrap();
    }
    out
}

/// Model with every parameter (biases included) drawn from `±scale`.
pub fn random_model(spec: ModelSpec, seed: u64, scale: f64) -> Model<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let mut m = Model::init(spec, seed).unwrap();
    for (_, t) in m.params.iter_mut() {
        let shape = t.shape().to_vec();
        *t = random(&mut r, &shape, scale);
    }
    m
}

/// `loss = Σ proj ⊙ y` over a fresh-state forward pass, with the analytic
/// parameter gradient from the model's backward pass.
pub fn projected_loss(
    model: &Model<f64>,
    u: &Tensor<f64>,
    proj: &Tensor<f64>,
) -> (f64, ParamStore<f64>) {
    let state = model.zero_state(u.dim(0));
    let (y, _, tape) = model.forward_taped(u, &state, ForwardOpts::default()).unwrap();
    let loss = y.dot(proj).unwrap();
    let grads = model.backward(&tape, proj).unwrap();
    (loss, grads)
}
