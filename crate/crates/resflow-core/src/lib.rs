//! Residual networks as numerical integrations of diffeomorphic flows.
//!
//! A classifier here is a stack of residual units read as explicit
//! integration steps of an ODE over velocity fields, followed by a linear
//! head. The crate provides the pieces end to end: a small reverse-mode
//! tape, tanh-basis velocity fields, Euler/RK4 flow integration forward
//! and backward in time, the composite training objective with optional
//! inverse-consistency regularization, Adam training on the two-spiral
//! task, and the Jacobian/decision-boundary/trajectory analyses of the
//! trained flows.

pub mod analysis;
pub mod data;
pub mod flow;
pub mod loss;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod velocity;

// The seeded generator appears in public signatures; re-export it and the
// seeding trait so callers don't have to pin matching rand versions.
pub use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub use analysis::{
    boundary_edge_count, decision_boundary, flow_jacobian_det, jacobian_map, trajectories,
    AnalysisGrid, JacobianMode, JacobianStats,
};
pub use data::{make_spiral, sample_domain, DataError, DomainBox, LabeledSet, SpiralConfig};
pub use flow::{Flow, FlowError, FlowModel, Scheme, StepMode, Trajectory, DIVERGENCE_LIMIT};
pub use loss::{
    accuracy, bce, loss_parts, sample_ic_domain, total_loss, total_loss_with_domain,
    ClassifierHead, IcMode, LabeledBatch, LossConfig, LossError, LossParts, TapedLoss, TapedParams,
};
pub use tape::{Gradients, NodeId, Tape, TapeError};
pub use tensor::{Tensor, TensorError};
pub use train::{
    adam_step, check_gradients, glorot_init, init_model, parameters_mut, run_training, train,
    AdamState, EpochRecord, ModelConfig, TrainAbort, TrainConfig, TrainError, TrainOutcome,
};
pub use velocity::{FieldError, LinearField, TapedField, VectorField, VelocityField};
