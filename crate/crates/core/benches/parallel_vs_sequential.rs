use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lpom::datasets::synth_blobs;
use lpom::trainer::{evaluate_with, init_weights, train_batch};
use lpom::{Parallelism, TrainConfig, XUpdateMode};

fn modes() -> [(&'static str, Parallelism); 2] {
    [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)]
}

fn batch_step(c: &mut Criterion) {
    let batch = synth_blobs(10, 10, 784, 8.0, 1).unwrap();
    let mut group = c.benchmark_group("train_batch");
    group.sample_size(10);
    for x_mode in [XUpdateMode::Serial, XUpdateMode::Jacobi] {
        for (name, par) in modes() {
            let config = TrainConfig {
                layer_sizes: vec![784, 256, 256, 10],
                x_mode,
                parallelism: par,
                ..TrainConfig::default()
            };
            let init = init_weights(&config).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{x_mode:?}"), name), &config, |b, config| {
                b.iter(|| {
                    let mut w = init.clone();
                    train_batch(&mut w, &batch, config).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = synth_blobs(10, 1000, 784, 8.0, 2).unwrap();
    let config = TrainConfig::default();
    let weights = init_weights(&config).unwrap();
    let mut group = c.benchmark_group("evaluate");
    for (name, par) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| evaluate_with(&weights, config.activation, &data, par).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_step, evaluation);
criterion_main!(benches);
