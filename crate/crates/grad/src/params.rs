use crate::error::{GradError, Result};
use crate::exec::Gradients;
use crate::tensor::{Element, Tensor};
use std::collections::BTreeMap;

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    /// Inserts a trainable parameter.
    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        self.params.insert(name.to_string(), t.requiring_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| GradError::MissingParam(name.to_string()))
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(self.require(name)?.shape())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Adds each gradient into the matching parameter's grad buffer.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            if let Some(p) = self.params.get_mut(name) {
                p.accumulate_grad(g.data())?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Freezes or unfreezes every parameter.
    pub fn set_trainable(&mut self, on: bool) {
        self.params
            .values_mut()
            .for_each(|p| p.set_requires_grad(on));
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
