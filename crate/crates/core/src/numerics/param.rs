use alloc::string::String;
use alloc::vec::Vec;

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named value with a gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Owns every parameter of a model in registration (canonical) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.trainable = false);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Number of scalar values held by trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(T::zero()));
    }

    /// Adds `grads` into the gradient buffers of trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let (true, Some(g)) = (p.trainable, g) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(shape_err(
                "assign",
                alloc::format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients produced by one backward pass.
///
/// Slots of frozen parameters stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Self {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    /// Sets the gradient of `id`, replacing any previous value.
    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.slots[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub(crate) fn add_into(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.slots[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Elementwise sum; `other` is added after `self`, fixing the order.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.add_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for t in self.slots.iter_mut().flatten() {
            t.scale_assign(c);
        }
    }

    pub fn global_norm(&self) -> T {
        let mut s = T::zero();
        for t in self.slots.iter().flatten() {
            s += t.sum_sq();
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|t| t.is_finite())
    }
}
