use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use milkit::datasets::{generate, SyntheticSpec};
use milkit::models::ModelConfig;
use milkit::training::{auroc, train, RunConfig};
use milkit::{build_model, collate, Bag};

fn bags(n_bags: usize) -> Vec<Bag> {
    let spec = SyntheticSpec {
        n_bags,
        seed: 3,
        ..Default::default()
    };
    generate(&spec).expect("valid spec")
}

fn bench_collate(c: &mut Criterion) {
    let bags = bags(32);
    c.bench_function("collate 32 bags", |b| {
        b.iter(|| collate(black_box(&bags)).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let batch = collate(&bags(8)).unwrap();
    let mut group = c.benchmark_group("forward 8 bags");
    for name in [
        "MeanPoolMIL",
        "ABMIL",
        "TransformerABMIL",
        "SmABMIL",
        "GraphABMIL",
    ] {
        let model = build_model(&ModelConfig::new(name, batch.dim()), 0).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| model.forward(black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let batch = collate(&bags(1)).unwrap();
    let model = build_model(&ModelConfig::new("ABMIL", batch.dim()), 0).unwrap();
    c.bench_function("ABMIL loss and gradients, one bag", |b| {
        b.iter(|| model.loss_and_grads(black_box(&batch)).unwrap())
    });
    let train_bags = bags(40);
    let cfg = RunConfig {
        epochs: 1,
        checkpoint_policy: milkit::training::CheckpointPolicy::Last,
        ..RunConfig::default()
    };
    c.bench_function("ABMIL epoch, 40 bags", |b| {
        b.iter_batched(
            || build_model(&ModelConfig::new("ABMIL", 8), 0).unwrap(),
            |mut m| train(&mut *m, &train_bags, &[], &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_auroc(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n)
        .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
        .collect();
    let labels: Vec<u8> = (0..n).map(|i| ((i * 31) % 7 < 3) as u8).collect();
    c.bench_function("auroc 10k", |b| {
        b.iter(|| auroc(black_box(&scores), black_box(&labels)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_collate,
    bench_forward,
    bench_backward,
    bench_auroc
);
criterion_main!(benches);
