//! Named learnable tensors and their gradient buffers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Learnable tensors keyed by hierarchical names such as `encoder.0.attn.wq`.
/// Registration order defines ids and is stable for a given model config.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: BTreeMap<String, ParamId>,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Registers a tensor. Panics on duplicate names, which would indicate a
    /// model-construction bug.
    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Per-parameter gradient accumulators, filled by one or more backward passes.
#[derive(Clone, Debug)]
pub struct GradBuffer<S> {
    grads: Vec<Vec<S>>,
    populated: bool,
}

impl<S: Real> GradBuffer<S> {
    pub fn for_params(params: &ParamStore<S>) -> Self {
        Self {
            grads: params.tensors.iter().map(|t| vec![S::zero(); t.len()]).collect(),
            populated: false,
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[S]) {
        for (g, &d) in self.grads[id.0].iter_mut().zip(grad) {
            *g += d;
        }
        self.populated = true;
    }

    /// Marks the buffer as holding a valid (possibly all-zero) gradient.
    pub fn mark_populated(&mut self) {
        self.populated = true;
    }

    pub fn is_populated(&self) -> bool {
        self.populated
    }

    pub fn get(&self, id: ParamId) -> &[S] {
        &self.grads[id.0]
    }

    pub fn scale(&mut self, factor: S) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }

    /// Euclidean norm over every gradient element.
    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn zero(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            *g = S::zero();
        }
        self.populated = false;
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
