//! Velocity fields parametrized as two-layer residual units.
//!
//! A field maps a point x to W2·tanh(W1·x + b1): each row of W1 defines a
//! tanh basis function of the input, and the columns of W2 hold the
//! weighting coefficients that combine them into a velocity vector. The
//! activation is fixed to tanh — it keeps every field smooth and bounded,
//! which the flow integrators rely on.

use crate::tape::{NodeId, Tape, TapeError};
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("velocity field needs hidden >= 1 and dim >= 1, got hidden={hidden}, dim={dim}")]
    EmptyField { hidden: usize, dim: usize },
    #[error("velocity field shapes do not conform: w1 {w1:?}, b1 {b1:?}, w2 {w2:?}")]
    ShapeMismatch {
        w1: (usize, usize),
        b1: Option<(usize, usize)>,
        w2: (usize, usize),
    },
    #[error("point has dimension {got}, field expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Anything that assigns a velocity vector (and its spatial Jacobian) to a
/// point. The flow integrators are generic over this, so analytic fields
/// with closed-form flows can stand in for trained ones.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Velocity at `x`. Callers guarantee `x.len() == self.dim()`.
    fn velocity(&self, x: &[f64]) -> Vec<f64>;

    /// Spatial Jacobian ∂V/∂x at `x`, a dim×dim matrix.
    fn jacobian(&self, x: &[f64]) -> Tensor;
}

/// Two-layer tanh residual unit: V(x) = W2·tanh(W1·x + b1).
///
/// W1 is hidden×dim (one basis function per row), b1 optional hidden×1,
/// W2 dim×hidden (weighting coefficients). No second-layer bias: the
/// parametrization has bare coefficients, and a constant drift term would
/// change the family of flows being modeled.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    w1: Tensor,
    b1: Option<Tensor>,
    w2: Tensor,
}

impl VelocityField {
    pub fn new(w1: Tensor, b1: Option<Tensor>, w2: Tensor) -> Result<Self, FieldError> {
        let (hidden, dim) = w1.shape();
        if hidden == 0 || dim == 0 {
            return Err(FieldError::EmptyField { hidden, dim });
        }
        let conforms = w2.shape() == (dim, hidden)
            && b1.as_ref().is_none_or(|b| b.shape() == (hidden, 1));
        if !conforms {
            return Err(FieldError::ShapeMismatch {
                w1: w1.shape(),
                b1: b1.as_ref().map(|b| b.shape()),
                w2: w2.shape(),
            });
        }
        Ok(VelocityField { w1, b1, w2 })
    }

    pub fn zeros(dim: usize, hidden: usize, bias: bool) -> Self {
        VelocityField {
            w1: Tensor::zeros(hidden, dim),
            b1: bias.then(|| Tensor::zeros(hidden, 1)),
            w2: Tensor::zeros(dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn has_bias(&self) -> bool {
        self.b1.is_some()
    }

    pub fn w1(&self) -> &Tensor {
        &self.w1
    }

    pub fn b1(&self) -> Option<&Tensor> {
        self.b1.as_ref()
    }

    pub fn w2(&self) -> &Tensor {
        &self.w2
    }

    /// Parameter tensors in checkpoint order: w1, b1 (when present), w2.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.w1];
        if let Some(b) = &self.b1 {
            v.push(b);
        }
        v.push(&self.w2);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w1];
        if let Some(b) = self.b1.as_mut() {
            v.push(b);
        }
        v.push(&mut self.w2);
        v
    }

    /// Hidden activations tanh(W1·x + b1).
    fn activations(&self, x: &[f64]) -> Vec<f64> {
        let hidden = self.hidden();
        let dim = self.dim();
        let w1 = self.w1.as_slice();
        (0..hidden)
            .map(|i| {
                let mut z = self.b1.as_ref().map_or(0.0, |b| b.as_slice()[i]);
                for d in 0..dim {
                    z += w1[i * dim + d] * x[d];
                }
                z.tanh()
            })
            .collect()
    }

    /// Batched evaluation: one point per column of a dim×n matrix.
    pub fn eval_batch(&self, xs: &Tensor) -> Result<Tensor, FieldError> {
        if xs.rows() != self.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim(),
                got: xs.rows(),
            });
        }
        let z = self.w1.matmul(xs)?;
        let pre = match &self.b1 {
            Some(b) => z.add(b)?,
            None => z,
        };
        Ok(self.w2.matmul(&pre.map(f64::tanh))?)
    }

    /// Checked evaluation for external callers; the `VectorField` impl
    /// assumes the dimension was already validated.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        if x.len() != self.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.velocity(x))
    }

    pub fn spatial_jacobian(&self, x: &[f64]) -> Result<Tensor, FieldError> {
        if x.len() != self.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.jacobian(x))
    }

    /// Record this field's parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape) -> TapedField {
        TapedField {
            w1: tape.leaf(self.w1.clone()),
            b1: self.b1.as_ref().map(|b| tape.leaf(b.clone())),
            w2: tape.leaf(self.w2.clone()),
        }
    }
}

impl VectorField for VelocityField {
    fn dim(&self) -> usize {
        self.w1.cols()
    }

    fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let act = self.activations(x);
        let dim = self.dim();
        let hidden = self.hidden();
        let w2 = self.w2.as_slice();
        (0..dim)
            .map(|r| {
                let mut v = 0.0;
                for i in 0..hidden {
                    v += w2[r * hidden + i] * act[i];
                }
                v
            })
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> Tensor {
        // ∂V/∂x = W2 · diag(1 − tanh²(W1x+b1)) · W1
        let act = self.activations(x);
        let dim = self.dim();
        let hidden = self.hidden();
        let w1 = self.w1.as_slice();
        let w2 = self.w2.as_slice();
        let mut jac = Tensor::zeros(dim, dim);
        for i in 0..hidden {
            let gate = 1.0 - act[i] * act[i];
            for r in 0..dim {
                let coeff = w2[r * hidden + i] * gate;
                for c in 0..dim {
                    let cur = jac.get(r, c);
                    jac.set(r, c, cur + coeff * w1[i * dim + c]);
                }
            }
        }
        jac
    }
}

/// A field's parameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapedField {
    pub w1: NodeId,
    pub b1: Option<NodeId>,
    pub w2: NodeId,
}

impl TapedField {
    /// W2·tanh(W1·x + b1) on the tape; `x` may be a dim×n batch.
    pub fn eval(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, TapeError> {
        let z = tape.matmul(self.w1, x)?;
        let pre = match self.b1 {
            Some(b) => tape.add(z, b)?,
            None => z,
        };
        let act = tape.tanh(pre);
        tape.matmul(self.w2, act)
    }

    /// Node ids in the same order as [`VelocityField::params`].
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut v = vec![self.w1];
        if let Some(b) = self.b1 {
            v.push(b);
        }
        v.push(self.w2);
        v
    }
}

/// Linear field V(x) = A·x. Its exact flow is the matrix exponential,
/// which makes it the reference instance for integrator and Jacobian
/// checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    a: Tensor,
}

impl LinearField {
    pub fn new(a: Tensor) -> Self {
        assert_eq!(a.rows(), a.cols(), "linear field matrix must be square");
        LinearField { a }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    /// The 2D rotation generator [[0,-1],[1,0]].
    pub fn rotation2d() -> Self {
        LinearField::new(Tensor::from_vec(2, 2, vec![0.0, -1.0, 1.0, 0.0]))
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let a = self.a.as_slice();
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    fn jacobian(&self, _x: &[f64]) -> Tensor {
        self.a.clone()
    }
}
