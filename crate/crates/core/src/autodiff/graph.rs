//! Tape-based reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and a backward
//! rule. Inputs always precede outputs on the tape, so walking it backwards
//! is a reverse topological order and visits each node exactly once.

use crate::autodiff::{Element, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for layers whose behaviour differs (batch norm, dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Backward rule of a recorded op.
///
/// `needs[i]` tells whether input `i` wants a gradient; the returned vector has
/// one entry per input, `None` where no gradient is produced.
pub trait BackwardOp<T: Element>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

enum Origin<T: Element> {
    Input,
    Param(ParamId),
    Op {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardOp<T>>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    origin: Origin<T>,
    requires_grad: bool,
}

/// The tape. One graph per forward pass; drop it after backward.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input. Its gradient is still readable after
    /// backward when `requires_grad` is set.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            origin: Origin::Input,
            requires_grad,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Records a snapshot of a parameter's current value.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push_node(Node {
            value: store.get(id).value.clone(),
            origin: Origin::Param(id),
            requires_grad: true,
        })
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

    /// Every recorded value, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    /// Name of the op that produced `v`, or `input` / `param` for leaves.
    pub fn op_name(&self, v: Var) -> &'static str {
        match &self.nodes[v.0].origin {
            Origin::Input => "input",
            Origin::Param(_) => "param",
            Origin::Op { rule, .. } => rule.name(),
        }
    }

    /// The parameter `v` was read from, if it is a parameter leaf.
    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].origin {
            Origin::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Inputs of the op that produced `v` (empty for leaves).
    pub fn inputs_of(&self, v: Var) -> &[Var] {
        match &self.nodes[v.0].origin {
            Origin::Op { inputs, .. } => inputs,
            _ => &[],
        }
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node. Rejects non-finite outputs.
    pub fn record(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: Box<dyn BackwardOp<T>>) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: rule.name(), node });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(Node {
            value,
            origin: Origin::Op { inputs, rule },
            requires_grad,
        }))
    }

    /// Computes gradients of the scalar `loss` for every node on the tape
    /// without touching parameter gradients.
    pub fn gradients(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Origin::Op { inputs, rule } = &node.origin {
                let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                if needs.iter().any(|&n| n) {
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let contributions = rule.backward(&values, &node.value, &grad_out, &needs);
                    debug_assert_eq!(contributions.len(), inputs.len());
                    for (input, contribution) in inputs.iter().zip(contributions) {
                        let Some(contribution) = contribution else {
                            continue;
                        };
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => {
                                for (a, c) in acc.iter_mut().zip(&contribution) {
                                    *a += *c;
                                }
                            }
                            slot @ None => *slot = Some(contribution),
                        }
                    }
                }
            }
            grads[idx] = Some(grad_out);
        }
        self.grads = grads;
        Ok(())
    }

    /// Backpropagates `loss` and accumulates (`+=`) into the parameter
    /// gradients of `store`. Calling it twice doubles the gradients.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Origin::Param(id), Some(grad)) = (&node.origin, grad) {
                let acc = store.get_mut(*id).grad.data_mut();
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += *g;
                }
            }
        }
        Ok(())
    }
}
