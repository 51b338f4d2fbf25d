use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Computes input gradients from the output gradient. The flag slice says
/// which inputs actually need one; entries for the rest may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    shape: Vec<usize>,
}

/// Ordered record of differentiable operations.
///
/// Nodes are appended as operations execute, so inputs always precede the
/// operations that consume them. A tape built with [`Tape::no_grad`] records
/// nothing and every [`Var`] on it is a plain value.
pub struct Tape {
    record: bool,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            record: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn no_grad() -> Self {
        Self {
            record: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tensor that gradients are requested for.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Rc::new(value))
    }

    /// Like [`Tape::leaf`], sharing an existing buffer.
    pub fn leaf_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        let node = if self.record {
            Some(self.push(Node {
                inputs: Vec::new(),
                backward: None,
                shape: value.shape().to_vec(),
            }))
        } else {
            None
        };
        Var {
            tape: self,
            node,
            value,
        }
    }

    /// A tensor treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.constant_shared(Rc::new(value))
    }

    pub fn constant_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        Var {
            tape: self,
            node: None,
            value,
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Record the result of an operation. `backward` is only kept when at
    /// least one input is tracked.
    pub(crate) fn op<'t>(
        &'t self,
        inputs: &[&Var<'t>],
        value: Tensor,
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'t> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.node).collect();
        let node = if self.record && ids.iter().any(Option::is_some) {
            Some(self.push(Node {
                inputs: ids,
                backward: Some(Box::new(backward)),
                shape: value.shape().to_vec(),
            }))
        } else {
            None
        };
        Var {
            tape: self,
            node,
            value: Rc::new(value),
        }
    }

    /// Reverse pass from a scalar `loss`. Each node is visited once, in
    /// reverse recording order; gradients reaching a node along several paths
    /// are summed.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let root = loss.node.ok_or(Error::DetachedGraph)?;
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.value.shape()));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad_out, &needs);
            for (input, grad) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(grad)) = (input, grad) else {
                    continue;
                };
                debug_assert_eq!(grad.shape(), nodes[*input].shape.as_slice());
                match &mut grads[*input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of leaf variables after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: &Var<'_>) -> Tensor {
        match var.node {
            Some(id) => self.grads[id]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[id])),
            None => Tensor::zeros(var.value.shape()),
        }
    }

    pub fn take(&mut self, var: &Var<'_>) -> Tensor {
        match var.node {
            Some(id) => self.grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[id])),
            None => Tensor::zeros(var.value.shape()),
        }
    }
}

/// A value on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) node: Option<usize>,
    pub(crate) value: Rc<Tensor>,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        Var {
            tape: self.tape,
            node: None,
            value: Rc::clone(&self.value),
        }
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("shape", &self.value.shape())
            .finish()
    }
}
