//! Shared fixtures for the benchmark targets.

use resflow_core::{
    init_model, make_spiral, ChaCha8Rng, ClassifierHead, FlowModel, LabeledSet, ModelConfig,
    SeedableRng, SpiralConfig,
};

/// A full-size model (20 layers, 10 basis functions) with Glorot
/// weights at a fixed seed.
pub fn reference_model(shared: bool) -> (FlowModel, ClassifierHead) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    init_model(
        &ModelConfig {
            shared,
            ..ModelConfig::default()
        },
        &mut rng,
    )
}

/// A small spiral set for batch benchmarks.
pub fn bench_dataset(n_per_class: usize) -> LabeledSet {
    make_spiral(&SpiralConfig {
        n_per_class,
        ..SpiralConfig::default()
    })
}
