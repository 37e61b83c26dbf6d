//! Named, ordered parameter sets with gradient slots.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::scalar::Real;
use super::tensor::{Shape, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Running statistics are stored here too but never trained.
    pub learnable: bool,
    pub grad: Tensor<S>,
    /// Set when a backward pass reached this entry.
    pub touched: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<S> {
    entries: Vec<ParamEntry<S>>,
    lookup: HashMap<String, usize>,
}

impl<S: Real> ModelParams<S> {
    pub fn new() -> Self {
        ModelParams {
            entries: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Appends an entry and returns its position.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>, learnable: bool) -> Result<usize> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.entries.len();
        self.lookup.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            grad: Tensor::zeros(value.shape()),
            value,
            learnable,
            touched: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.id(name).map(|i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &ParamEntry<S> {
        &self.entries[id]
    }

    pub fn entry_mut(&mut self, id: usize) -> &mut ParamEntry<S> {
        &mut self.entries[id]
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<S>> {
        self.entries.iter_mut()
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        let e = &mut self.entries[id];
        if e.value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {name:?} has shape {:?}, got {:?}",
                e.value.shape(),
                value.shape()
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|v| *v = S::zero());
            e.touched = false;
        }
    }

    /// Registers every entry as a graph leaf. Learnable entries require
    /// gradients when `train` is set.
    pub fn bind(&self, graph: &mut Graph<S>, train: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| graph.leaf(e.value.clone(), train && e.learnable))
            .collect()
    }

    /// Adds the leaf gradients of a finished backward pass.
    pub fn accumulate_grads(&mut self, graph: &Graph<S>, bound: &[Var]) {
        for (e, &v) in self.entries.iter_mut().zip(bound) {
            if let Some(g) = graph.grad(v) {
                for (d, &s) in e.grad.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
                e.touched = true;
            }
        }
    }

    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.shape())).collect()
    }

    pub fn num_learnable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.learnable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    learnable: e.learnable,
                    grad: e.grad.cast(),
                    touched: e.touched,
                })
                .collect(),
            lookup: self.lookup.clone(),
        }
    }
}
