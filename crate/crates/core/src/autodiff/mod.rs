//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order. Calling
//! [`Graph::backward`] on a scalar node walks the tape in exact reverse and
//! returns a [`Gradients`] table holding ∂loss/∂node for every node that
//! depends on a gradient-tracking leaf. Fan-out accumulates additively.
//!
//! Parameters enter a graph through [`Graph::param`], which remembers the
//! binding so [`Gradients::accumulate_into`] can write the results back to
//! the owning [`ParamStore`].

pub(crate) mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Dims, Tensor};

pub use ops::FilterKind;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: ops::Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, ops::Op::Leaf, false)
    }

    /// Leaf with gradient tracking.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, ops::Op::Leaf, true)
    }

    /// Copies a parameter into the graph as a tracked leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let var = self.variable(store.get(id).tensor.clone());
        self.bindings.push((var, id));
        var
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: ops::Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: ops::Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Reverse pass from a (1,1,1,1) node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let dims = self.dims(loss);
        if dims != Dims::scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got dims {dims}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for k in (0..=loss.0).rev() {
            let Some(upstream) = grads[k].take() else {
                continue;
            };
            let node = &self.nodes[k];
            let contributions = node.op.backward(self, &node.value, &upstream);
            grads[k] = Some(upstream);
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every bound parameter's gradient into its `grad` slot.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(var, id) in &self.bindings {
            if let Some(g) = self.get(var) {
                store.accumulate_grad(id, g);
            }
        }
    }
}
