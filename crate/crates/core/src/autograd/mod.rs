//! Reverse-mode differentiation on an append-only tape.
//!
//! Every operation appends a node holding its output value and, when any
//! input participates in differentiation, a closure mapping the output
//! gradient to input gradients. Nodes are stored in creation order, so the
//! reverse of that order is a valid topological order for backpropagation.
//!
//! One tape corresponds to one forward/backward pass and is owned by a
//! single thread. Parameters are bound lazily through [`Tape::param`], which
//! caches the leaf per [`ParamId`] so a parameter used twice accumulates both
//! contributions.

mod ops;

use std::collections::BTreeMap;

pub use ops::PoolMode;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// What a backward closure sees.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether each input needs a gradient; closures may skip the others.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Var>,
    train_params: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape on which bound parameters require gradients.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), params: BTreeMap::new(), train_params: true }
    }

    /// A tape on which parameters are recorded as constants.
    pub fn inference() -> Self {
        Self { train_params: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<usize>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> Var {
        self.nodes.push(Node { value, parents, requires_grad, backward });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), true, None)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    /// Binds a parameter, recording it on first use.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).clone();
        let v = if self.train_params { self.leaf(value) } else { self.constant(value) };
        self.params.insert(id, v);
        v
    }

    /// Makes later [`param`](Self::param) lookups for `id` return `var`.
    pub fn bind_param(&mut self, id: ParamId, var: Var) {
        self.params.insert(id, var);
    }

    /// Records the result of a custom operation. `backward` is dropped when no
    /// parent requires a gradient. Non-finite outputs are rejected.
    pub fn record(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var> {
        let value = value.check_finite(op)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        Ok(self.push(value, parents.iter().map(|p| p.0).collect(), requires_grad, backward))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Backpropagates from a single-element root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.nodes[root.0].value.shape()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradients for every bound parameter (zero when unreached).
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .map(|(&id, &v)| {
                let g = self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (id, g)
            })
            .collect()
    }
}
