use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Grads, Tape, Tensor, Var};

/// Named trainable weights. Iteration order is the lexical name order, which
/// fixes initialization, checkpoint layout and update order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Register every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<S>) -> Result<ParamVars> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            vars.insert(name.clone(), tape.leaf(t.clone())?);
        }
        Ok(ParamVars { vars })
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    /// Pull per-parameter gradients out of `grads`; unused parameters get zeros.
    pub fn collect<S: Scalar>(&self, tape: &Tape<S>, mut grads: Grads<S>) -> ParamGrads<S> {
        let grads = self
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (name.clone(), g)
            })
            .collect();
        ParamGrads { grads }
    }
}

/// Gradient per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<S> {
    grads: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        let grads = store.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        Self { grads }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor<S>) {
        self.grads.insert(name.into(), g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.grads.iter()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (name, g) in &mut self.grads {
            if let Some(o) = other.grads.get(name) {
                g.add_assign(o);
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        self.grads.values_mut().for_each(|g| g.scale_assign(s));
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Largest absolute entry across all parameters.
    pub fn max_abs(&self) -> S {
        self.grads
            .values()
            .flat_map(|g| g.data().iter())
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }
}
