use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arch, ModelSpec};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

/// Named parameter arrays of one model instance, in a stable order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S: Scalar> {
    tensors: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails on duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::State(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Euclidean norm over every element of every tensor.
    pub fn global_norm(&self) -> S {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        self.tensors.values_mut().for_each(|t| t.scale(factor));
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::State("parameter layouts differ".into()));
        }
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Checks names and shapes against what `spec` requires.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let expected = param_shapes(spec);
        if expected.len() != self.tensors.len() {
            return Err(Error::State(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("param_store", t.shape(), &shape));
            }
        }
        Ok(())
    }
}

/// Parameter names and shapes implied by a model spec, in canonical order.
pub fn param_shapes(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let h = spec.hidden;
    let mut out = Vec::new();
    for l in 0..spec.depth {
        let cin = spec.layer_input_width(l);
        match spec.arch {
            Arch::Gru => {
                for g in ["z", "r", "h"] {
                    out.push((format!("gru.{l}.W{g}"), vec![cin, h]));
                    out.push((format!("gru.{l}.U{g}"), vec![h, h]));
                    out.push((format!("gru.{l}.b{g}"), vec![h]));
                }
            }
            Arch::Tcn => {
                out.push((format!("tcn.{l}.kernel"), vec![h, cin, spec.kernel]));
                out.push((format!("tcn.{l}.bias"), vec![h]));
                if spec.residual && cin != h {
                    out.push((format!("tcn.{l}.proj"), vec![h, cin, 1]));
                }
            }
        }
    }
    out.push(("head.W".into(), vec![h, spec.output_dim]));
    out.push(("head.b".into(), vec![spec.output_dim]));
    out
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.ends_with("kernel") || name.ends_with("proj") {
        shape[1] * shape[2]
    } else {
        shape[0]
    }
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or("");
    last.starts_with('b')
}

/// Uniform `(-s, s)` weights with `s = 1/sqrt(fan_in)`, zero biases.
pub fn init_params<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParamStore<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in param_shapes(spec) {
        let n: usize = shape.iter().product();
        let tensor = if is_bias(&name) {
            Tensor::zeros(&shape)
        } else {
            let s = 1.0 / (fan_in(&name, &shape) as f64).sqrt();
            let data = (0..n).map(|_| S::of(rng.gen_range(-s..s))).collect();
            Tensor::from_vec(&shape, data)?
        };
        store.insert(name, tensor)?;
    }
    Ok(store)
}
