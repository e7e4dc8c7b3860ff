//! Wengert tape: reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded in forward order with their results; the
//! backward pass walks the tape in reverse, accumulating adjoints by the
//! chain rule. The tape is rebuilt for every forward pass — the models
//! here are small, so correctness and auditability win over graph reuse.

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("backward requires a scalar loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error(transparent)]
    Shape(#[from] TensorError),
}

/// Index of a recorded node. Valid only for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// The primitive set. Everything differentiated here (flows, classifier
/// head, every loss term) composes from these ops, which keeps each
/// adjoint rule small enough to audit by hand.
#[derive(Debug, Clone)]
enum Op {
    /// Parameter or constant input; receives an adjoint but propagates nothing.
    Leaf,
    /// lhs · rhs
    MatMul { lhs: NodeId, rhs: NodeId },
    /// lhs + rhs, equal shapes or column-broadcast rhs (m×1 onto m×n)
    Add { lhs: NodeId, rhs: NodeId },
    /// factor · input, factor a compile-time constant (not differentiated)
    Scale { input: NodeId, factor: f64 },
    Tanh { input: NodeId },
    Sigmoid { input: NodeId },
    /// Elementwise natural log. Inputs must be positive; the caller is
    /// responsible for clamping first (see `clamp`).
    Log { input: NodeId },
    /// Sum of all entries → 1×1
    Sum { input: NodeId },
    /// Elementwise square
    Square { input: NodeId },
    /// Elementwise clamp to [lo, hi]; gradient passes only strictly inside
    /// the band. Exists so probabilities can be guarded before `Log`.
    Clamp { input: NodeId, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient map returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of a leaf, or None if the loss does not reach it.
    pub fn try_get(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints[id.0].as_ref()
    }

    /// Adjoint of a leaf; zero tensor of the node's shape when unreachable.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.adjoints[id.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Record a leaf (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let value = self.value(lhs).matmul(self.value(rhs))?;
        Ok(self.push(Op::MatMul { lhs, rhs }, value))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let value = self.value(lhs).add(self.value(rhs))?;
        Ok(self.push(Op::Add { lhs, rhs }, value))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = self.value(input).scale(factor);
        self.push(Op::Scale { input, factor }, value)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(f64::tanh);
        self.push(Op::Tanh { input }, value)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid { input }, value)
    }

    pub fn log(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(f64::ln);
        self.push(Op::Log { input }, value)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let value = Tensor::from_vec(1, 1, vec![self.value(input).sum()]);
        self.push(Op::Sum { input }, value)
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v * v);
        self.push(Op::Square { input }, value)
    }

    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { input, lo, hi }, value)
    }

    /// Reverse pass from a scalar loss node. Returns the adjoint of every
    /// leaf; leaves the loss does not reach keep a zero adjoint.
    /// Intermediate adjoints are dropped once propagated. Does not mutate
    /// the tape, so repeated calls yield bit-identical results.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TapeError> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(TapeError::NonScalarLoss { rows, cols });
        }

        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let grad = match self.nodes[idx].op {
                // Leaf adjoints are the result; keep them in place.
                Op::Leaf => continue,
                _ => match adjoints[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul { lhs, rhs } => {
                    let d_lhs = grad.matmul_nt(self.value(*rhs))?;
                    let d_rhs = self.value(*lhs).matmul_tn(&grad)?;
                    accumulate(&mut adjoints, *lhs, d_lhs)?;
                    accumulate(&mut adjoints, *rhs, d_rhs)?;
                }
                Op::Add { lhs, rhs } => {
                    let d_rhs = if self.value(*rhs).shape() == grad.shape() {
                        grad.clone()
                    } else {
                        // Column-broadcast add: adjoint is the row sum.
                        let n = grad.cols();
                        let sums = grad
                            .as_slice()
                            .chunks(n)
                            .map(|row| row.iter().sum())
                            .collect();
                        Tensor::col_vec(sums)
                    };
                    accumulate(&mut adjoints, *lhs, grad)?;
                    accumulate(&mut adjoints, *rhs, d_rhs)?;
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut adjoints, *input, grad.scale(*factor))?;
                }
                Op::Tanh { input } => {
                    let y = &self.nodes[idx].value;
                    let d = zip_map(&grad, y, |g, y| g * (1.0 - y * y));
                    accumulate(&mut adjoints, *input, d)?;
                }
                Op::Sigmoid { input } => {
                    let y = &self.nodes[idx].value;
                    let d = zip_map(&grad, y, |g, y| g * y * (1.0 - y));
                    accumulate(&mut adjoints, *input, d)?;
                }
                Op::Log { input } => {
                    let x = self.value(*input);
                    let d = zip_map(&grad, x, |g, x| g / x);
                    accumulate(&mut adjoints, *input, d)?;
                }
                Op::Sum { input } => {
                    let (r, c) = self.value(*input).shape();
                    let g = grad.get(0, 0);
                    let d = Tensor::from_vec(r, c, vec![g; r * c]);
                    accumulate(&mut adjoints, *input, d)?;
                }
                Op::Square { input } => {
                    let x = self.value(*input);
                    let d = zip_map(&grad, x, |g, x| g * 2.0 * x);
                    accumulate(&mut adjoints, *input, d)?;
                }
                Op::Clamp { input, lo, hi } => {
                    let x = self.value(*input);
                    let d = zip_map(&grad, x, |g, x| if x > *lo && x < *hi { g } else { 0.0 });
                    accumulate(&mut adjoints, *input, d)?;
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { adjoints, shapes })
    }
}

fn accumulate(
    adjoints: &mut [Option<Tensor>],
    id: NodeId,
    delta: Tensor,
) -> Result<(), TapeError> {
    match &mut adjoints[id.0] {
        Some(existing) => {
            if existing.shape() != delta.shape() {
                return Err(TapeError::Shape(TensorError::ShapeMismatch {
                    op: "accumulate",
                    lhs: existing.shape(),
                    rhs: delta.shape(),
                }));
            }
            for (e, d) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}
