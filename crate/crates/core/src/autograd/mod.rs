//! Eager reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Each op
//! appends a node recording its inputs and whatever it needs for the backward
//! rule; nodes are appended in evaluation order, so reverse recording order is
//! a valid topological order for [`Tape::backward`].
//!
//! ```
//! use vora::autograd::Tape;
//! use vora::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
//! let y = tape.sum(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

mod backward;
mod ops;

pub use backward::Gradients;

use crate::error::{Result, VoraError};
use crate::tensor::Tensor;

/// Additive mask sentinel for disallowed attention entries.
pub const MASKED: f32 = f32::MIN;

pub(crate) const ROPE_BASE: f32 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Affine(Var, f32),
    Gelu(Var),
    Silu(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f32> },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        active: Vec<bool>,
        probs: Vec<f32>,
    },
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Embedding { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Rope { x: Var, positions: Vec<usize> },
    CosineRows(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Parameters being trained pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions)
            && !value.is_finite()
            && inputs.iter().all(|&v| self.value(v).is_finite())
        {
            return Err(VoraError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }
}
