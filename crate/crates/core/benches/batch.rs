//! Rayon against the sequential path on the data-parallel hot loops:
//! minibatch gradients, held-out prediction and corpus generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vlqa_core::config::RunConfig;
use vlqa_core::dataset::Dataset;
use vlqa_core::model::Model;
use vlqa_core::parallel::Execution;
use vlqa_core::synth;

const PATHS: [(&str, Execution); 2] = [("rayon", Execution::Auto), ("sequential", Execution::Sequential)];

fn batch_gradients(c: &mut Criterion) {
    let ds = Dataset::synthetic(42, 64, 64, 0.3, 6).unwrap();
    let model = Model::from_config(&RunConfig::default(), &ds.manifest).unwrap();
    let mut group = c.benchmark_group("batch_loss_and_grad");
    for batch in [8usize, 64] {
        let idx: Vec<usize> = (0..batch).collect();
        for (name, exec) in PATHS {
            group.bench_with_input(BenchmarkId::new(name, batch), &idx, |b, idx| {
                b.iter(|| model.batch_loss_and_grad(&ds.train, black_box(idx), exec).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("predict_all");
    for (name, exec) in PATHS {
        group.bench_function(name, |b| b.iter(|| model.predict_all(black_box(&ds.test), exec).unwrap()));
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_streams");
    for (name, exec) in PATHS {
        group.bench_function(name, |b| b.iter(|| synth::generate_streams(black_box(1), 0, 500, 0.3, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, generation);
criterion_main!(benches);
