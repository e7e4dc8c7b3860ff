//! Parameter initialization and stochastic optimization: Glorot uniform
//! init, Adam with bias correction, epoch/minibatch loop.
//!
//! Determinism contract: one ChaCha stream drives a run. Draw order is
//! field parameters in layer order (w1 then w2 per field), head weights,
//! the fixed domain evaluation sample (domain-driven runs only), then per
//! epoch the shuffle, then per batch the domain samples. Identical
//! (seed, config, dataset) therefore reproduce identical parameters
//! bit for bit.

use crate::data::LabeledSet;
use crate::flow::{Flow, FlowModel, Scheme, StepMode};
use crate::loss::{
    loss_parts, loss_parts_and_accuracy, sample_ic_domain, total_loss_with_domain, ClassifierHead,
    LabeledBatch, LossConfig, LossError,
};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::velocity::VelocityField;
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch_size must be >= 1")]
    ZeroBatchSize,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("beta parameters must lie in [0, 1), got beta1={beta1}, beta2={beta2}")]
    BadBetas { beta1: f64, beta2: f64 },
    #[error("spiral training requires dim 2, model has dim {0}")]
    DimMismatch(usize),
    #[error("parameter/gradient arity mismatch: {params} params, {grads} grads")]
    ArityMismatch { params: usize, grads: usize },
    #[error("parameter {index} has shape {param:?} but gradient has shape {grad:?}")]
    GradShapeMismatch {
        index: usize,
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Optimization settings (Adam hyperparameters, batching, epochs, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 300,
            epochs: 1000,
            seed: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::BadLearningRate(self.lr));
        }
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(TrainError::BadBetas {
                beta1: self.beta1,
                beta2: self.beta2,
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::ZeroBatchSize);
        }
        Ok(())
    }
}

/// Architecture hyperparameters for the flow classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub shared: bool,
    pub bias: bool,
    pub scheme: Scheme,
    pub step_mode: StepMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 2,
            hidden: 10,
            layers: 20,
            shared: true,
            bias: true,
            scheme: Scheme::Euler,
            step_mode: StepMode::Normalized,
        }
    }
}

/// Glorot (Xavier) uniform initialization: entries i.i.d. on [−a, a]
/// with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_init(fan_out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    assert!(fan_out > 0 && fan_in > 0, "glorot_init needs positive dims");
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..fan_out * fan_in).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(fan_out, fan_in, data)
}

/// Fresh model: Glorot weights, zero biases, zero head intercept.
pub fn init_model(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (FlowModel, ClassifierHead) {
    let distinct = if cfg.shared { 1 } else { cfg.layers };
    let mut fields = Vec::with_capacity(distinct);
    for _ in 0..distinct {
        let w1 = glorot_init(cfg.hidden, cfg.dim, rng);
        let b1 = cfg.bias.then(|| Tensor::zeros(cfg.hidden, 1));
        let w2 = glorot_init(cfg.dim, cfg.hidden, rng);
        fields.push(VelocityField::new(w1, b1, w2).expect("shapes conform by construction"));
    }
    let model = if cfg.shared {
        Flow::shared(
            fields.pop().expect("one field"),
            cfg.layers,
            cfg.scheme,
            cfg.step_mode,
        )
    } else {
        Flow::unshared(fields, cfg.scheme, cfg.step_mode)
    }
    .expect("layers >= 1");
    let head = ClassifierHead::new(glorot_init(1, cfg.dim, rng), 0.0);
    (model, head)
}

/// All trainable tensors in canonical order: per distinct field w1,
/// b1 (when present), w2; then head w; then head b. Must stay in lock
/// step with `TapedParams::node_ids`.
pub fn parameters_mut<'a>(
    model: &'a mut FlowModel,
    head: &'a mut ClassifierHead,
) -> Vec<&'a mut Tensor> {
    let mut params: Vec<&mut Tensor> = model
        .distinct_fields_mut()
        .iter_mut()
        .flat_map(|f| f.params_mut())
        .collect();
    params.extend(head.params_mut());
    params
}

/// Adam first/second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn for_params(params: &[&mut Tensor]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ArityMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::GradShapeMismatch {
                index,
                param: p.shape(),
                grad: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - cfg.beta1.powi(t);
    let v_corr = 1.0 - cfg.beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let p = param.as_mut_slice();
        let g = grad.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / m_corr;
            let v_hat = v[i] / v_corr;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Full-training-set diagnostics recorded once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub wd: f64,
    pub ic: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// Why a run stopped early. The outcome then carries the last
/// parameters that produced a finite full-set loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAbort {
    pub epoch: usize,
    pub batch: usize,
    pub error: LossError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub head: ClassifierHead,
    pub log: Vec<EpochRecord>,
    pub abort: Option<TrainAbort>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.log.last().map(|r| r.accuracy)
    }
}

/// Run the epoch/minibatch loop. On integration divergence (or a
/// non-finite full-set loss) the run aborts and the outcome keeps the
/// last good snapshot instead of the diverged parameters.
pub fn train(
    dataset: &LabeledSet,
    model: FlowModel,
    head: ClassifierHead,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if model.dim() != 2 {
        return Err(TrainError::DimMismatch(model.dim()));
    }

    let mut model = model;
    let mut head = head;

    // Fixed sample for the logged ic term of domain-driven runs, so the
    // per-epoch curve is comparable across epochs.
    let ic_eval = sample_ic_domain(loss_cfg, rng)?;

    let mut adam = {
        let params = parameters_mut(&mut model, &mut head);
        AdamState::for_params(&params)
    };

    let full = LabeledBatch::full(dataset);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut log: Vec<EpochRecord> = Vec::with_capacity(train_cfg.epochs);
    let mut snapshot = (model.clone(), head.clone());

    for epoch in 1..=train_cfg.epochs {
        if train_cfg.shuffle {
            indices.shuffle(rng);
        }
        for (batch_idx, chunk) in indices.chunks(train_cfg.batch_size).enumerate() {
            let batch = LabeledBatch::from_set(dataset, chunk);
            let domain = sample_ic_domain(loss_cfg, rng)?;
            let mut tape = Tape::new();
            let taped =
                match total_loss_with_domain(&mut tape, &model, &head, &batch, loss_cfg, domain.as_ref()) {
                    Ok(t) => t,
                    Err(error) => {
                        let (m, h) = snapshot;
                        return Ok(TrainOutcome {
                            model: m,
                            head: h,
                            log,
                            abort: Some(TrainAbort {
                                epoch,
                                batch: batch_idx,
                                error,
                            }),
                        });
                    }
                };
            let grad_map = tape.backward(taped.total).expect("total loss is scalar");
            let node_ids = taped.params.node_ids();
            let grads: Vec<Tensor> = node_ids.iter().map(|&id| grad_map.get(id)).collect();
            let mut params = parameters_mut(&mut model, &mut head);
            adam_step(&mut params, &grads, &mut adam, train_cfg)?;
        }

        let epoch_eval = loss_parts_and_accuracy(&model, &head, &full, loss_cfg, ic_eval.as_ref());
        match epoch_eval {
            Ok((parts, acc)) if parts.total.is_finite() => {
                log.push(EpochRecord {
                    epoch,
                    bce: parts.bce,
                    wd: parts.wd,
                    ic: parts.ic,
                    total: parts.total,
                    accuracy: acc,
                });
                snapshot = (model.clone(), head.clone());
            }
            Ok(_) | Err(_) => {
                let error = match epoch_eval {
                    Err(e) => e,
                    // Finite-loss guard tripped without an integrator error.
                    Ok(_) => LossError::Flow(crate::flow::FlowError::Divergence { step: 0 }),
                };
                let (m, h) = snapshot;
                return Ok(TrainOutcome {
                    model: m,
                    head: h,
                    log,
                    abort: Some(TrainAbort {
                        epoch,
                        batch: usize::MAX,
                        error,
                    }),
                });
            }
        }
    }

    Ok(TrainOutcome {
        model,
        head,
        log,
        abort: None,
    })
}

/// Seed a stream, initialize, train: the reproducible end-to-end entry
/// point used by the CLI.
pub fn run_training(
    dataset: &LabeledSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let (model, head) = init_model(model_cfg, &mut rng);
    train(dataset, model, head, loss_cfg, train_cfg, &mut rng)
}

/// Compare analytic gradients against central finite differences of the
/// straight-line loss (step 1e-6). An entry passes when the relative
/// error is within `tol` or the absolute gap is below 1e-9 (the
/// finite-difference noise floor). Returns the number of entries checked.
pub fn check_gradients(
    model: &FlowModel,
    head: &ClassifierHead,
    batch: &LabeledBatch,
    cfg: &LossConfig,
    domain: Option<&Tensor>,
    tol: f64,
) -> Result<usize, String> {
    let mut tape = Tape::new();
    let taped = total_loss_with_domain(&mut tape, model, head, batch, cfg, domain)
        .map_err(|e| e.to_string())?;
    let grad_map = tape.backward(taped.total).map_err(|e| e.to_string())?;
    let ids = taped.params.node_ids();
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grad_map.get(id)).collect();

    let eval = |k: usize, idx: usize, delta: f64| -> Result<f64, String> {
        let mut m = model.clone();
        let mut h = head.clone();
        {
            let mut params = parameters_mut(&mut m, &mut h);
            params[k].as_mut_slice()[idx] += delta;
        }
        loss_parts(&m, &h, batch, cfg, domain)
            .map(|p| p.total)
            .map_err(|e| e.to_string())
    };

    let step = 1e-6;
    let mut checked = 0;
    for (k, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            let fd = (eval(k, idx, step)? - eval(k, idx, -step)?) / (2.0 * step);
            let ad = grad.as_slice()[idx];
            let gap = (ad - fd).abs();
            if gap > tol * ad.abs().max(fd.abs()) && gap > 1e-9 {
                return Err(format!(
                    "gradient mismatch at param {k} entry {idx}: analytic {ad:e}, finite-difference {fd:e}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
