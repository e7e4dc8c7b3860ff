//! The two-class 2D spiral task and domain sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("domain box is degenerate: x [{x0}, {x1}], y [{y0}, {y1}]")]
    DegenerateBox { x0: f64, x1: f64, y0: f64, y1: f64 },
}

/// Axis-aligned rectangle used for domain-driven regularization and for
/// analysis grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl DomainBox {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self, DataError> {
        let b = DomainBox { x0, x1, y0, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let finite = [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(DataError::DegenerateBox {
                x0: self.x0,
                x1: self.x1,
                y0: self.y0,
                y1: self.y1,
            });
        }
        Ok(())
    }
}

impl Default for DomainBox {
    /// [-6, 6]²: covers the default spiral (radius ≤ 4 plus noise) with margin.
    fn default() -> Self {
        DomainBox {
            x0: -6.0,
            x1: 6.0,
            y0: -6.0,
            y1: 6.0,
        }
    }
}

/// Archimedean two-spiral generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralConfig {
    pub n_per_class: usize,
    /// Revolutions per arm.
    pub turns: f64,
    /// Radius at the end of an arm.
    pub radius_scale: f64,
    /// Std-dev of Gaussian positional noise added per coordinate.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        SpiralConfig {
            n_per_class: 1000,
            turns: 1.5,
            radius_scale: 4.0,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

/// Labeled 2D points, all labels in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The arc parameter starts strictly above zero so the two arms do not
/// collide at the origin; coincident points with opposite labels would
/// make the task unsolvable for any bijective flow.
const TAU_MIN: f64 = 0.05;

/// Generate the two-spiral set: class 0 follows r(τ)=scale·τ,
/// θ(τ)=2π·turns·τ on a uniform τ grid ending at 1; class 1 is the same
/// arm rotated by π. Class 0 points come first, then class 1.
pub fn make_spiral(cfg: &SpiralConfig) -> LabeledSet {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma is non-negative");
    let n = cfg.n_per_class;

    let mut points = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for class in 0..2u8 {
        let phase = if class == 0 { 0.0 } else { std::f64::consts::PI };
        for i in 0..n {
            let tau = if n == 1 {
                1.0
            } else {
                TAU_MIN + (1.0 - TAU_MIN) * i as f64 / (n - 1) as f64
            };
            let r = cfg.radius_scale * tau;
            let theta = 2.0 * std::f64::consts::PI * cfg.turns * tau + phase;
            let mut p = [r * theta.cos(), r * theta.sin()];
            if cfg.noise_sigma > 0.0 {
                p[0] += noise.sample(&mut rng);
                p[1] += noise.sample(&mut rng);
            }
            points.push(p);
            labels.push(class);
        }
    }
    LabeledSet { points, labels }
}

/// n i.i.d. uniform points in the box.
pub fn sample_domain(
    domain: &DomainBox,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>, DataError> {
    domain.validate()?;
    Ok((0..n)
        .map(|_| {
            [
                rng.gen_range(domain.x0..domain.x1),
                rng.gen_range(domain.y0..domain.y1),
            ]
        })
        .collect())
}
