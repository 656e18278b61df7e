//! Named parameter storage and binding of parameters into a graph.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered table of named `f32` parameters. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(id)
    }

    pub fn insert_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid std");
        let t = Tensor::from_fn(shape, |_| normal.sample(rng));
        self.insert(name, t)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn insert_ones(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, Tensor::ones(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<f32>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<f32>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Overwrites every value, e.g. to build all-zero test models.
    pub fn fill_all(&mut self, value: f32) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.set_grad(None);
        }
    }

    /// Records every parameter as a gradient-requiring leaf on `g`.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.param(t.cast()))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Like [`ParamStore::bind`], but `id` is served by an existing node.
    pub fn bind_replacing<T: Real>(
        &self,
        g: &mut Graph<T>,
        id: ParamId,
        var: Var,
    ) -> Result<Bound> {
        if g.shape(var) != self.get(id).shape() {
            return Err(Error::Dimension(format!(
                "replacement for {} has shape {:?}, expected {:?}",
                self.name(id),
                g.shape(var),
                self.get(id).shape()
            )));
        }
        let mut vars = Vec::with_capacity(self.len());
        for (i, t) in self.tensors.iter().enumerate() {
            vars.push(if i == id.0 { var } else { g.param(t.cast())? });
        }
        Ok(Bound { vars })
    }

    /// Collects `scale * dL/dp` for every bound parameter after a
    /// backward pass. Parameters the loss never touched get zeros.
    pub fn collect_grads(&self, g: &Graph<f32>, bound: &Bound, scale: f32) -> Vec<Vec<f32>> {
        self.ids()
            .map(|id| match g.grad(bound[id]) {
                Some(gr) => gr.iter().map(|v| v * scale).collect(),
                None => vec![0.0; self.get(id).len()],
            })
            .collect()
    }

    pub fn accumulate_grads(&mut self, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.len()
            )));
        }
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.accumulate_grad(g)?;
        }
        Ok(())
    }
}

/// Graph nodes for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
