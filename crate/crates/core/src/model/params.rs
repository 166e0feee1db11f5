use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Layer-norm gain or shift.
    Norm,
    Embedding,
}

impl ParamKind {
    /// Whether the L2 penalty covers this parameter.
    pub fn regularized(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Embedding)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Learnable tensors in registration order, addressable by dotted name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, name: String, kind: ParamKind, value: Tensor) -> usize {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, kind, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    /// Puts every parameter on the tape; `trainable` decides whether
    /// gradients flow back to them.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect()
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Serialization(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Serialization(format!(
                    "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.name,
                    mine.value.shape()
                )));
            }
            if !theirs.value.all_finite() {
                return Err(Error::Numeric(format!("checkpoint parameter {} is not finite", theirs.name)));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
    }

    /// Sum of squared entries over L2-regularized parameters.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind.regularized())
            .map(|p| p.value.sum_squares())
            .sum()
    }
}

/// Parameter registration with deterministic initialization.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], a: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-a..=a)).collect();
        Tensor::new(shape.to_vec(), data).expect("valid init shape")
    }

    /// Glorot-uniform weight with the given fan-in/fan-out.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = self.uniform(shape, a);
        self.store.add(name, ParamKind::Weight, t)
    }

    pub fn bias(&mut self, name: String, n: usize) -> usize {
        self.store.add(name, ParamKind::Bias, Tensor::zeros(&[n]))
    }

    pub fn norm(&mut self, name: String, n: usize, v: f64) -> usize {
        self.store.add(name, ParamKind::Norm, Tensor::filled(&[n], v))
    }

    pub fn embedding(&mut self, name: String, rows: usize, dim: usize) -> usize {
        let a = (3.0 / dim as f64).sqrt();
        let t = self.uniform(&[rows, dim], a);
        self.store.add(name, ParamKind::Embedding, t)
    }
}
