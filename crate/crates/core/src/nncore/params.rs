use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::State(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::State(format!("unknown parameter {name}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub(crate) fn add_into(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.len() != grad.len() {
            return Err(Error::dim("gradient length", slot.len(), grad.len()));
        }
        for (a, &b) in slot.data_mut().iter_mut().zip(grad.data()) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Elementwise `self += other`, requiring identical layout.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config(
                "parameter stores have different layouts".into(),
            ));
        }
        for (name, (a, b)) in self
            .names
            .iter()
            .zip(self.tensors.iter().zip(&other.tensors))
        {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "shape mismatch for parameter {name}"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}
