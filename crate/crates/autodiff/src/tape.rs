//! Operation tape and the reverse sweep.
//!
//! Every primitive appends one node to the tape, so node indices are already a
//! topological order and the backward sweep simply walks them in reverse.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::ops::{self, Op};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// How ReLU nodes route gradients during the backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradMode {
    /// Ordinary chain rule.
    #[default]
    Standard,
    /// ReLU passes a gradient only where its input is positive and the
    /// upstream gradient is positive. Every other primitive is unchanged.
    Guided,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Records primitive operations so their gradients can be replayed backward.
///
/// A tape is single-threaded; build a separate tape per context.
pub struct Tape {
    id: u64,
    mode: GradMode,
    pub(crate) nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(GradMode::Standard)
    }
}

impl Tape {
    pub fn new(mode: GradMode) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            mode,
            nodes: Vec::new(),
        }
    }

    pub fn mode(&self) -> GradMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|x|` over the inputs of every recorded ReLU, or `None` when
    /// the tape has no ReLU.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { input } => Some(self.nodes[input].value.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.node(var).value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.node(var).value.shape()
    }

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { tape: self.id, index }
    }

    pub(crate) fn node(&self, var: Var) -> &Node {
        self.check(var);
        &self.nodes[var.index]
    }

    pub(crate) fn check(&self, var: Var) {
        assert!(
            var.tape == self.id && var.index < self.nodes.len(),
            "variable {var:?} is not recorded on this tape"
        );
    }

    pub(crate) fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.index].requires_grad
    }

    /// Runs the reverse sweep from the given seed gradients.
    ///
    /// # Panics
    ///
    /// Panics if a seed refers to a variable from another tape or if its
    /// shape differs from the seeded tensor.
    pub fn backward(&self, seeds: &[(Var, &Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for &(var, seed) in seeds {
            self.check(var);
            let value = &self.nodes[var.index].value;
            assert_eq!(
                value.shape(),
                seed.shape(),
                "seed shape does not match the seeded tensor"
            );
            let slot = grads[var.index].get_or_insert_with(|| vec![0.0; value.len()]);
            for (g, s) in slot.iter_mut().zip(seed.data()) {
                *g += s;
            }
            last = last.max(var.index + 1);
        }

        for index in (0..last).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            let (below, rest) = grads.split_at_mut(index);
            let Some(upstream) = rest[0].as_deref() else {
                continue;
            };
            ops::backward(self, node, upstream, below, self.mode);
        }

        Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        }
    }

    /// Convenience for a one-element output seeded with 1.
    pub fn backward_scalar(&self, output: Var) -> Gradients {
        let seed = Tensor::full(self.shape(output), 1.0);
        self.backward(&[(output, &seed)])
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when no seeded output depends on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        assert_eq!(var.tape, self.tape, "variable belongs to a different tape");
        self.grads[var.index]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[var.index], g.clone()))
    }

    /// Gradient of `var`, zeros when absent.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.index]))
    }

    pub fn slice(&self, var: Var) -> Option<&[f64]> {
        assert_eq!(var.tape, self.tape, "variable belongs to a different tape");
        self.grads[var.index].as_deref()
    }
}

/// Returns the accumulation buffer for node `index`, creating zeros on first use.
pub(crate) fn slot(grads: &mut [Option<Vec<f64>>], index: usize, len: usize) -> &mut Vec<f64> {
    grads[index].get_or_insert_with(|| vec![0.0; len])
}
