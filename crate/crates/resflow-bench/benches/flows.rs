use criterion::{black_box, criterion_group, criterion_main, Criterion};
use resflow_bench::{bench_dataset, reference_model};
use resflow_core::{
    flow_jacobian_det, jacobian_map, ChaCha8Rng, DomainBox, JacobianMode, LabeledBatch, LossConfig,
    SeedableRng, Tape,
};

fn bench_forward(c: &mut Criterion) {
    let (model, _) = reference_model(true);
    c.bench_function("forward point 20 steps", |b| {
        b.iter(|| model.forward(black_box(&[1.3, -0.7])).unwrap())
    });

    let dataset = bench_dataset(150);
    let batch = LabeledBatch::full(&dataset);
    c.bench_function("forward_batch 300 points", |b| {
        b.iter(|| model.forward_batch(black_box(&batch.xs)).unwrap())
    });
}

fn bench_loss_gradient(c: &mut Criterion) {
    let (model, head) = reference_model(true);
    let dataset = bench_dataset(150);
    let batch = LabeledBatch::full(&dataset);
    let cfg = LossConfig::default();
    c.bench_function("total_loss + backward, batch 300", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let loss =
                resflow_core::total_loss(&mut tape, &model, &head, &batch, &cfg, &mut rng).unwrap();
            tape.backward(loss.total).unwrap()
        })
    });
}

fn bench_jacobian(c: &mut Criterion) {
    let (model, _) = reference_model(true);
    c.bench_function("jacobian det analytic", |b| {
        b.iter(|| flow_jacobian_det(&model, black_box(&[0.4, 0.9]), JacobianMode::Analytic).unwrap())
    });
    c.bench_function("jacobian_map 50x50", |b| {
        b.iter(|| jacobian_map(&model, &DomainBox::default(), (50, 50)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_forward, bench_loss_gradient, bench_jacobian
}
criterion_main!(benches);
