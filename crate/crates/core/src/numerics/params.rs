use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter collection. Iteration order is the lexicographic name
/// order, which fixes the layout of flattened gradients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor.with_grad());
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
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

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(|t| t.grad = None);
    }

    /// Gradients in name order, concatenated. Missing buffers count as zero.
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_elements());
        for t in self.tensors.values() {
            match &t.grad {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        out
    }

    /// Overwrites every gradient buffer from a flat vector laid out like [`Self::flat_grads`].
    pub fn set_flat_grads(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_elements() {
            return Err(Error::shape(
                "set_flat_grads",
                &[self.num_elements()],
                &[flat.len()],
            ));
        }
        let mut offset = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.grad = Some(flat[offset..offset + n].to_vec());
            offset += n;
        }
        Ok(())
    }

    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_elements());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Parameters whose value differs, by name (used for checkpoint comparisons).
    pub fn diff_names(&self, other: &ModelParams) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for (k, v) in &self.tensors {
            match other.tensors.get(k) {
                Some(o) if o.shape() == v.shape() && o.data() == v.data() => {}
                _ => names.push(k.clone()),
            }
        }
        for k in other.tensors.keys() {
            if !self.tensors.contains_key(k) {
                names.push(k.clone());
            }
        }
        names
    }
}

/// Gaussian-initialized weight matrix.
pub fn normal_init<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("positive dims")
}
