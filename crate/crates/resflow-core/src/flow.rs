//! Flow integration: a stack of residual steps as the numerical solution
//! of an ODE driven by velocity fields.
//!
//! Each layer advances the state by one explicit integration step of
//! dx/dt = V_l(x). With shared fields the flow discretizes a stationary
//! ODE, whose exact solution is the exponential map of the field; the
//! one-parameter subgroup property of that map is what `compose_check`
//! measures. Step size is either 1/L (normalized: L layers integrate
//! t ∈ [0,1], so refining L approaches the continuous flow) or 1
//! (absorbed: the raw residual update x + V(x)).

use crate::tape::{NodeId, Tape, TapeError};
use crate::tensor::Tensor;
use crate::velocity::{TapedField, VectorField, VelocityField};
use thiserror::Error;

/// Abort threshold: integration state norms beyond this are treated as
/// divergence rather than being allowed to reach NaN/Inf silently.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("integration diverged at step {step}")]
    Divergence { step: usize },
    #[error("point has dimension {got}, flow expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("composition check requires a shared (stationary) flow")]
    NotStationary,
    #[error("fraction {fraction} does not split {steps} steps into an integral count")]
    NonIntegralSplit { fraction: f64, steps: usize },
    #[error("fractions must satisfy s, t, s+t in [0,1], got s={s}, t={t}")]
    FractionOutOfRange { s: f64, t: f64 },
    #[error("unshared flow needs one field per step, got {fields} fields")]
    FieldCountMismatch { fields: usize },
    #[error("flow needs at least one step")]
    NoSteps,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// h = 1/L; the L layers integrate unit time.
    Normalized,
    /// h = 1; each layer is the raw residual update.
    Absorbed,
}

/// States visited by an integration, from the input to the final point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn end(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// L integration steps through velocity fields: the ResNet mapping block.
///
/// `shared` flows hold one field applied at every step (stationary
/// velocity); unshared flows hold one field per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow<F = VelocityField> {
    fields: Vec<F>,
    steps: usize,
    shared: bool,
    scheme: Scheme,
    step_mode: StepMode,
}

pub type FlowModel = Flow<VelocityField>;

impl<F: VectorField> Flow<F> {
    pub fn shared(field: F, steps: usize, scheme: Scheme, step_mode: StepMode) -> Result<Self, FlowError> {
        if steps == 0 {
            return Err(FlowError::NoSteps);
        }
        Ok(Flow {
            fields: vec![field],
            steps,
            shared: true,
            scheme,
            step_mode,
        })
    }

    pub fn unshared(fields: Vec<F>, scheme: Scheme, step_mode: StepMode) -> Result<Self, FlowError> {
        if fields.is_empty() {
            return Err(FlowError::NoSteps);
        }
        let steps = fields.len();
        Ok(Flow {
            fields,
            steps,
            shared: false,
            scheme,
            step_mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn step_mode(&self) -> StepMode {
        self.step_mode
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn step_size(&self) -> f64 {
        match self.step_mode {
            StepMode::Normalized => 1.0 / self.steps as f64,
            StepMode::Absorbed => 1.0,
        }
    }

    /// The distinct parameter sets: length 1 when shared, L otherwise.
    pub fn distinct_fields(&self) -> &[F] {
        &self.fields
    }

    pub fn distinct_fields_mut(&mut self) -> &mut [F] {
        &mut self.fields
    }

    pub fn field_at(&self, layer: usize) -> &F {
        if self.shared {
            &self.fields[0]
        } else {
            &self.fields[layer]
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn one_step(&self, field: &F, x: &[f64], h: f64) -> Vec<f64> {
        match self.scheme {
            Scheme::Euler => {
                let v = field.velocity(x);
                axpy(x, h, &v)
            }
            Scheme::Rk4 => {
                let k1 = field.velocity(x);
                let k2 = field.velocity(&axpy(x, h / 2.0, &k1));
                let k3 = field.velocity(&axpy(x, h / 2.0, &k2));
                let k4 = field.velocity(&axpy(x, h, &k3));
                x.iter()
                    .enumerate()
                    .map(|(i, &xi)| {
                        xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                    })
                    .collect()
            }
        }
    }

    /// Jacobian of a single integration step at state `x`: the exact
    /// derivative of the discrete update, not of the continuous flow.
    fn one_step_jacobian(&self, field: &F, x: &[f64], h: f64) -> Tensor {
        let eye = Tensor::identity(x.len());
        match self.scheme {
            Scheme::Euler => {
                // I + h·∂V/∂x
                eye.add(&field.jacobian(x).scale(h)).expect("square shapes")
            }
            Scheme::Rk4 => {
                let k1 = field.velocity(x);
                let x2 = axpy(x, h / 2.0, &k1);
                let k2 = field.velocity(&x2);
                let x3 = axpy(x, h / 2.0, &k2);
                let k3 = field.velocity(&x3);
                let x4 = axpy(x, h, &k3);

                let j1 = field.jacobian(x);
                let stage = |jv: Tensor, prev: &Tensor, w: f64| -> Tensor {
                    let inner = eye.add(&prev.scale(w)).expect("square shapes");
                    jv.matmul(&inner).expect("square shapes")
                };
                let j2 = stage(field.jacobian(&x2), &j1, h / 2.0);
                let j3 = stage(field.jacobian(&x3), &j2, h / 2.0);
                let j4 = stage(field.jacobian(&x4), &j3, h);

                let mut total = eye;
                for (j, w) in [(j1, h / 6.0), (j2, h / 3.0), (j3, h / 3.0), (j4, h / 6.0)] {
                    total = total.add(&j.scale(w)).expect("square shapes");
                }
                total
            }
        }
    }

    fn integrate(&self, x: &[f64], layer_order_reversed: bool, h: f64) -> Result<Trajectory, FlowError> {
        self.check_dim(x)?;
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(x.to_vec());
        let mut cur = x.to_vec();
        for i in 0..self.steps {
            let layer = if layer_order_reversed { self.steps - 1 - i } else { i };
            cur = self.one_step(self.field_at(layer), &cur, h);
            if diverged(&cur) {
                return Err(FlowError::Divergence { step: i });
            }
            states.push(cur.clone());
        }
        Ok(Trajectory { states })
    }

    /// Integrate forward through all L steps; the returned trajectory has
    /// L+1 states, the last being the mapped point.
    pub fn forward(&self, x: &[f64]) -> Result<Trajectory, FlowError> {
        self.integrate(x, false, self.step_size())
    }

    /// Integrate the negated fields in reversed layer order: the discrete
    /// approximation of the inverse flow. Exact inverse only in the
    /// continuous limit for unshared flows; the inverse-consistency loss
    /// exists to shrink precisely this gap.
    pub fn backward_flow(&self, y: &[f64]) -> Result<Trajectory, FlowError> {
        self.integrate(y, true, -self.step_size())
    }

    /// Forward integration that also accumulates the Jacobian of the
    /// composed map: M ← J_step(x_l)·M per step.
    pub fn forward_jacobian(&self, x: &[f64]) -> Result<(Trajectory, Tensor), FlowError> {
        self.check_dim(x)?;
        let h = self.step_size();
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(x.to_vec());
        let mut cur = x.to_vec();
        let mut acc = Tensor::identity(self.dim());
        for layer in 0..self.steps {
            let field = self.field_at(layer);
            let step_jac = self.one_step_jacobian(field, &cur, h);
            acc = step_jac.matmul(&acc).expect("square shapes");
            cur = self.one_step(field, &cur, h);
            if diverged(&cur) {
                return Err(FlowError::Divergence { step: layer });
            }
            states.push(cur.clone());
        }
        Ok((Trajectory { states }, acc))
    }

    /// Jacobian of the single step applied at `layer` for state `x`
    /// (forward direction). Exposed so the determinant-composition route
    /// can be cross-checked against [`Flow::forward_jacobian`].
    pub fn step_jacobian(&self, layer: usize, x: &[f64]) -> Tensor {
        self.one_step_jacobian(self.field_at(layer), x, self.step_size())
    }

    fn split_steps(&self, fraction: f64) -> Result<usize, FlowError> {
        let exact = fraction * self.steps as f64;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 {
            return Err(FlowError::NonIntegralSplit {
                fraction,
                steps: self.steps,
            });
        }
        Ok(rounded as usize)
    }

    fn integrate_steps(&self, x: &[f64], count: usize) -> Result<Vec<f64>, FlowError> {
        let h = self.step_size();
        let mut cur = x.to_vec();
        for i in 0..count {
            cur = self.one_step(&self.fields[0], &cur, h);
            if diverged(&cur) {
                return Err(FlowError::Divergence { step: i });
            }
        }
        Ok(cur)
    }

    /// One-parameter subgroup deviation ‖φ(s)(φ(t)(x)) − φ(s+t)(x)‖ where
    /// φ(τ) integrates τ·L steps of the shared field. Zero by construction
    /// for integral splits, since the composed runs replay the identical
    /// step sequence.
    pub fn compose_check(&self, x: &[f64], s: f64, t: f64) -> Result<f64, FlowError> {
        if !self.shared {
            return Err(FlowError::NotStationary);
        }
        self.check_dim(x)?;
        let valid = (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) && s + t <= 1.0 + 1e-12;
        if !valid {
            return Err(FlowError::FractionOutOfRange { s, t });
        }
        let k_s = self.split_steps(s)?;
        let k_t = self.split_steps(t)?;

        let via_t = self.integrate_steps(x, k_t)?;
        let composed = self.integrate_steps(&via_t, k_s)?;
        let direct = self.integrate_steps(x, k_s + k_t)?;

        let dev_sq: f64 = composed
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(dev_sq.sqrt())
    }
}

impl Flow<VelocityField> {
    /// Register every distinct field's parameters as tape leaves, in
    /// layer order.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<TapedField> {
        self.fields.iter().map(|f| f.register(tape)).collect()
    }

    fn batch_step(&self, field: &VelocityField, xs: &Tensor, h: f64) -> Tensor {
        let eval = |x: &Tensor| field.eval_batch(x).expect("dims validated");
        match self.scheme {
            Scheme::Euler => xs.add(&eval(xs).scale(h)).expect("equal shapes"),
            Scheme::Rk4 => {
                let k1 = eval(xs);
                let k2 = eval(&xs.add(&k1.scale(h / 2.0)).expect("equal shapes"));
                let k3 = eval(&xs.add(&k2.scale(h / 2.0)).expect("equal shapes"));
                let k4 = eval(&xs.add(&k3.scale(h)).expect("equal shapes"));
                let sum = k1
                    .scale(h / 6.0)
                    .add(&k2.scale(h / 3.0))
                    .and_then(|s| s.add(&k3.scale(h / 3.0)))
                    .and_then(|s| s.add(&k4.scale(h / 6.0)))
                    .expect("equal shapes");
                xs.add(&sum).expect("equal shapes")
            }
        }
    }

    fn batch_integrate(&self, xs: &Tensor, reversed: bool, h: f64) -> Result<Tensor, FlowError> {
        if xs.rows() != self.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                got: xs.rows(),
            });
        }
        let mut cur = xs.clone();
        for i in 0..self.steps {
            let layer = if reversed { self.steps - 1 - i } else { i };
            cur = self.batch_step(self.field_at(layer), &cur, h);
            if batch_diverged(&cur) {
                return Err(FlowError::Divergence { step: i });
            }
        }
        Ok(cur)
    }

    /// Tape-free forward map of a dim×n batch (final states only). Applies
    /// the same per-entry operation order as the per-point path.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<Tensor, FlowError> {
        self.batch_integrate(xs, false, self.step_size())
    }

    /// Tape-free inverse-direction map of a dim×n batch.
    pub fn backward_flow_batch(&self, ys: &Tensor) -> Result<Tensor, FlowError> {
        self.batch_integrate(ys, true, -self.step_size())
    }

    fn taped_step(
        &self,
        tape: &mut Tape,
        field: &TapedField,
        x: NodeId,
        h: f64,
    ) -> Result<NodeId, TapeError> {
        match self.scheme {
            Scheme::Euler => {
                let v = field.eval(tape, x)?;
                let hv = tape.scale(v, h);
                tape.add(x, hv)
            }
            Scheme::Rk4 => {
                let k1 = field.eval(tape, x)?;
                let d1 = tape.scale(k1, h / 2.0);
                let x2 = tape.add(x, d1)?;
                let k2 = field.eval(tape, x2)?;
                let d2 = tape.scale(k2, h / 2.0);
                let x3 = tape.add(x, d2)?;
                let k3 = field.eval(tape, x3)?;
                let d3 = tape.scale(k3, h);
                let x4 = tape.add(x, d3)?;
                let k4 = field.eval(tape, x4)?;

                let w1 = tape.scale(k1, h / 6.0);
                let w2 = tape.scale(k2, h / 3.0);
                let w3 = tape.scale(k3, h / 3.0);
                let w4 = tape.scale(k4, h / 6.0);
                let a = tape.add(w1, w2)?;
                let b = tape.add(w3, w4)?;
                let delta = tape.add(a, b)?;
                tape.add(x, delta)
            }
        }
    }

    fn taped_integrate(
        &self,
        tape: &mut Tape,
        x0: NodeId,
        fields: &[TapedField],
        reversed: bool,
        h: f64,
    ) -> Result<Vec<NodeId>, FlowError> {
        if fields.len() != self.fields.len() {
            return Err(FlowError::FieldCountMismatch {
                fields: fields.len(),
            });
        }
        let mut nodes = Vec::with_capacity(self.steps + 1);
        nodes.push(x0);
        let mut cur = x0;
        for i in 0..self.steps {
            let layer = if reversed { self.steps - 1 - i } else { i };
            let field = if self.shared { &fields[0] } else { &fields[layer] };
            cur = self.taped_step(tape, field, cur, h)?;
            if batch_diverged(tape.value(cur)) {
                return Err(FlowError::Divergence { step: i });
            }
            nodes.push(cur);
        }
        Ok(nodes)
    }

    /// Forward integration on the tape. `x0` may be a dim×n batch of
    /// points (one per column). Returns the node of every visited state.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x0: NodeId,
        fields: &[TapedField],
    ) -> Result<Vec<NodeId>, FlowError> {
        self.taped_integrate(tape, x0, fields, false, self.step_size())
    }

    /// Inverse-direction integration on the tape (negated fields,
    /// reversed layer order).
    pub fn backward_flow_on_tape(
        &self,
        tape: &mut Tape,
        y0: NodeId,
        fields: &[TapedField],
    ) -> Result<Vec<NodeId>, FlowError> {
        self.taped_integrate(tape, y0, fields, true, -self.step_size())
    }
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&xi, &yi)| xi + a * yi).collect()
}

fn diverged(x: &[f64]) -> bool {
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    !norm_sq.is_finite() || norm_sq > DIVERGENCE_LIMIT * DIVERGENCE_LIMIT
}

/// Divergence check for a dim×n batch: any column (point) out of bounds.
fn batch_diverged(states: &Tensor) -> bool {
    let (dim, n) = states.shape();
    let data = states.as_slice();
    for j in 0..n {
        let mut norm_sq = 0.0;
        for d in 0..dim {
            let v = data[d * n + j];
            norm_sq += v * v;
        }
        if !norm_sq.is_finite() || norm_sq > DIVERGENCE_LIMIT * DIVERGENCE_LIMIT {
            return true;
        }
    }
    false
}
