//! Run configuration: a flat key-value file covering the dataset, the
//! architecture, the loss, and the optimizer. Unknown keys are errors —
//! a typo must not silently fall back to a default.

use crate::error::CliError;
use resflow_core::{
    DomainBox, IcMode, LossConfig, ModelConfig, Scheme, SpiralConfig, StepMode, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// The four architectures. The tag fixes both the weight-sharing flag and
/// the inverse-consistency mode, so a config cannot contradict itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Time-varying fields, no inverse-consistency penalty.
    Unshared,
    /// Stationary field (shared weights), no penalty.
    Shared,
    /// Shared weights, penalty on training-data round trips.
    SharedIcData,
    /// Shared weights, penalty on domain-sampled round trips.
    SharedIcDomain,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Unshared,
        Variant::Shared,
        Variant::SharedIcData,
        Variant::SharedIcDomain,
    ];

    pub fn shared(self) -> bool {
        self != Variant::Unshared
    }

    pub fn ic_mode(self) -> IcMode {
        match self {
            Variant::Unshared | Variant::Shared => IcMode::None,
            Variant::SharedIcData => IcMode::Data,
            Variant::SharedIcDomain => IcMode::Domain,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Unshared => "unshared",
            Variant::Shared => "shared",
            Variant::SharedIcData => "shared_ic_data",
            Variant::SharedIcDomain => "shared_ic_domain",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Variant::Unshared => 0,
            Variant::Shared => 1,
            Variant::SharedIcData => 2,
            Variant::SharedIcDomain => 3,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.to_byte() == b)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant '{s}' (expected one of unshared, shared, shared_ic_data, shared_ic_domain)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeOpt {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepModeOpt {
    Normalized,
    Absorbed,
}

/// Everything a run needs, resolved. Serialized back out verbatim as the
/// run manifest, so a manifest is itself a valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Variant,

    // Flow architecture
    pub layers: usize,
    pub hidden: usize,
    pub dim: usize,
    pub scheme: SchemeOpt,
    pub step_mode: StepModeOpt,
    pub bias: bool,

    // Spiral dataset
    pub n_per_class: usize,
    pub turns: f64,
    pub radius_scale: f64,
    pub noise_sigma: f64,
    pub data_seed: u64,

    // Loss
    pub weight_decay: f64,
    pub ic_weight: f64,
    pub domain_samples_per_batch: usize,
    pub domain_x0: f64,
    pub domain_x1: f64,
    pub domain_y0: f64,
    pub domain_y1: f64,

    // Optimization
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spiral = SpiralConfig::default();
        let loss = LossConfig::default();
        let train = TrainConfig::default();
        let domain = DomainBox::default();
        RunConfig {
            variant: Variant::Shared,
            layers: 20,
            hidden: 10,
            dim: 2,
            scheme: SchemeOpt::Euler,
            step_mode: StepModeOpt::Normalized,
            bias: true,
            n_per_class: spiral.n_per_class,
            turns: spiral.turns,
            radius_scale: spiral.radius_scale,
            noise_sigma: spiral.noise_sigma,
            data_seed: spiral.seed,
            weight_decay: loss.weight_decay,
            ic_weight: loss.ic_weight,
            domain_samples_per_batch: loss.domain_samples_per_batch,
            domain_x0: domain.x0,
            domain_x1: domain.x1,
            domain_y0: domain.y0,
            domain_y1: domain.y1,
            lr: train.lr,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            batch_size: train.batch_size,
            epochs: train.epochs,
            seed: train.seed,
            shuffle: train.shuffle,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field_err = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.dim != 2 {
            return field_err("dim", format!("spiral runs are 2-dimensional, got {}", self.dim));
        }
        if self.layers == 0 {
            return field_err("layers", "must be >= 1".into());
        }
        if self.hidden == 0 {
            return field_err("hidden", "must be >= 1".into());
        }
        if self.n_per_class == 0 {
            return field_err("n_per_class", "must be >= 1".into());
        }
        if self.noise_sigma < 0.0 {
            return field_err("noise_sigma", "must be >= 0".into());
        }
        if self.weight_decay < 0.0 {
            return field_err("weight_decay", "must be >= 0".into());
        }
        if self.ic_weight < 0.0 {
            return field_err("ic_weight", "must be >= 0".into());
        }
        if self.batch_size == 0 {
            return field_err("batch_size", "must be >= 1".into());
        }
        if self.lr <= 0.0 {
            return field_err("lr", "must be > 0".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return field_err(name, "must lie in [0, 1)".into());
            }
        }
        if self.variant.ic_mode() == IcMode::Domain && self.domain_samples_per_batch == 0 {
            return field_err("domain_samples_per_batch", "must be >= 1 for shared_ic_domain".into());
        }
        if self.domain_box().is_err() {
            return field_err(
                "domain_x0..domain_y1",
                "domain box must have positive extent in both axes".into(),
            );
        }
        Ok(())
    }

    pub fn domain_box(&self) -> Result<DomainBox, CliError> {
        DomainBox::new(self.domain_x0, self.domain_x1, self.domain_y0, self.domain_y1)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn spiral_config(&self) -> SpiralConfig {
        SpiralConfig {
            n_per_class: self.n_per_class,
            turns: self.turns,
            radius_scale: self.radius_scale,
            noise_sigma: self.noise_sigma,
            seed: self.data_seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            hidden: self.hidden,
            layers: self.layers,
            shared: self.variant.shared(),
            bias: self.bias,
            scheme: match self.scheme {
                SchemeOpt::Euler => Scheme::Euler,
                SchemeOpt::Rk4 => Scheme::Rk4,
            },
            step_mode: match self.step_mode {
                StepModeOpt::Normalized => StepMode::Normalized,
                StepModeOpt::Absorbed => StepMode::Absorbed,
            },
        }
    }

    pub fn loss_config(&self) -> Result<LossConfig, CliError> {
        Ok(LossConfig {
            weight_decay: self.weight_decay,
            ic_mode: self.variant.ic_mode(),
            ic_weight: self.ic_weight,
            domain_samples_per_batch: self.domain_samples_per_batch,
            domain_box: self.domain_box()?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    /// The fields that determine the dataset; runs must agree on these to
    /// be comparable.
    pub fn dataset_signature(&self) -> (u64, usize, u64, u64, u64) {
        (
            self.data_seed,
            self.n_per_class,
            self.turns.to_bits(),
            self.radius_scale.to_bits(),
            self.noise_sigma.to_bits(),
        )
    }
}
