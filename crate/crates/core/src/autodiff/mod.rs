//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive executed on it together with the
//! values needed by its adjoint. [`Tape::backward`] replays the record in
//! reverse, visiting each node once, and returns gradients for all nodes
//! that depend on a trainable leaf.
//!
//! A tape and its [`Var`]s belong to one thread. Independent tapes can run
//! concurrently.

mod backward;
mod ops;
#[cfg(test)]
mod tests;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, Exec};
use crate::real::Real;
use crate::tensor::Tensor;

pub use ops::ElementwiseOp;

pub(crate) type NodeId = usize;

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        s: T,
    },
    Relu {
        a: NodeId,
    },
    Gelu {
        a: NodeId,
    },
    AddBias {
        a: NodeId,
        bias: NodeId,
    },
    Sqrt {
        a: NodeId,
    },
    Ln {
        a: NodeId,
    },
    Sum {
        a: NodeId,
    },
    Mean {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        a: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeom,
        c_out: usize,
        cols: Vec<Vec<T>>,
    },
    AvgPool {
        x: NodeId,
        planes: usize,
        h: usize,
        w: usize,
        window: usize,
        stride: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
        n: usize,
        c: usize,
        spatial: usize,
        train: bool,
    },
    Concat {
        inputs: Vec<NodeId>,
        outer: usize,
        widths: Vec<usize>,
    },
    Reindex {
        a: NodeId,
        map: Rc<Vec<usize>>,
    },
    Reshape {
        a: NodeId,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Operation record for one forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    exec: Exec,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::with_exec(Exec::auto())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf. Gradients are reported only for leaves created
    /// with `requires_grad = true`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        if cfg!(debug_assertions) && !value.is_finite() && !matches!(op, Op::Leaf) {
            let nodes = self.nodes.borrow();
            let inputs_finite = backward::inputs(&op)
                .iter()
                .all(|&i| nodes[i].value.is_finite());
            assert!(
                !inputs_finite,
                "non-finite output from finite inputs in {}",
                op_name(&op)
            );
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    fn check_same(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self, other.tape) {
            Ok(())
        } else {
            Err(Error::Graph("variables belong to different tapes".into()))
        }
    }

    /// Reverse pass from a scalar loss. The tape is consumed: a second call
    /// is rejected.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        self.check_same(&loss)?;
        if self.consumed.get() {
            return Err(Error::Graph(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any recorded trainable leaf".into(),
            ));
        }
        self.consumed.set(true);
        let grads = backward::run(&nodes, loss.id, self.exec);
        Ok(Gradients { grads })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, or zeros when it received none.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::BatchMatMul { .. } => "bmm",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Relu { .. } => "relu",
        Op::Gelu { .. } => "gelu",
        Op::AddBias { .. } => "add_bias",
        Op::Sqrt { .. } => "sqrt",
        Op::Ln { .. } => "ln",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax { .. } => "softmax",
        Op::Conv2d { .. } => "conv2d",
        Op::AvgPool { .. } => "avg_pool2d",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Concat { .. } => "concat",
        Op::Reindex { .. } => "reindex",
        Op::Reshape { .. } => "reshape",
    }
}
