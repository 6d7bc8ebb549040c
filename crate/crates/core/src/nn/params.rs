use std::collections::HashMap;

use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::error::{AmfError, Result};

/// Named parameter tensors in a fixed insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AmfError::usage(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| AmfError::usage(format!("no parameter named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Registers every parameter as a constant input (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            ids: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), g.input(t.clone())))
                .collect(),
        }
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            ids: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), g.param(t.clone())))
                .collect(),
        }
    }
}

/// Parameter name → graph node mapping for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: HashMap<String, NodeId>,
}

impl FromIterator<(String, NodeId)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, NodeId)>>(iter: I) -> Self {
        Self {
            ids: iter.into_iter().collect(),
        }
    }
}

impl Bound {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| AmfError::usage(format!("parameter {name} is not bound")))
    }

    /// Collects gradients after `backward`, in the store's order.
    /// Unreached parameters get zero gradients.
    pub fn grads<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for name in store.names() {
            let t = g.grad_or_zeros(self.ids[name]);
            out.insert(name, t).expect("store names are unique");
        }
        out
    }
}
