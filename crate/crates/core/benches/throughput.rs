//! Training-step and forward throughput.
//!
//! Benchmark ids carry the execution mode, so the rayon path and the
//! sequential fallback can be compared through criterion baselines:
//!
//! ```text
//! cargo bench -p sxnet-core --bench throughput -- --save-baseline parallel
//! cargo bench -p sxnet-core --bench throughput --no-default-features -- --baseline parallel
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::autodiff::{Eager, ParamStore};
use sxnet_core::model::ModelConfig;
use sxnet_core::network::Network;
use sxnet_core::parallel;
use sxnet_core::tasks::TaskKind;
use sxnet_core::trainer::eval_samples;

fn mode() -> &'static str {
    if parallel::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn setup(len: usize, batch: usize) -> (Network, ParamStore<f32>, Vec<sxnet_core::tasks::TaskSample>) {
    let mut store = ParamStore::new();
    let config = ModelConfig {
        maps: 48,
        ..ModelConfig::default()
    };
    let k = len.trailing_zeros();
    let net = Network::new(TaskKind::Rev, &config, k, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let samples = eval_samples(TaskKind::Rev, len, batch, 1, 1);
    (net, store, samples)
}

fn gradient_step(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("gradients/{}", mode()));
    group.sample_size(10);
    let (net, store, samples) = setup(32, 32);
    let plan = net.plan(32).unwrap();
    group.throughput(Throughput::Elements(samples.len() as u64));
    for chunks in [1usize, 2, 4, 8] {
        group.bench_with_input(BenchmarkId::new("chunks", chunks), &chunks, |b, &chunks| {
            b.iter(|| net.gradients(&store, &plan, &samples, chunks, false));
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("score/{}", mode()));
    group.sample_size(10);
    for len in [64usize, 256, 1024] {
        let (net, store, samples) = setup(len, 16);
        let plan = net.plan(len).unwrap();
        group.throughput(Throughput::Elements((len * samples.len()) as u64));
        group.bench_with_input(BenchmarkId::new("length", len), &len, |b, _| {
            b.iter(|| net.score(&store, &plan, &samples, 4));
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for len in [256usize, 1024, 4096] {
        let (net, store, samples) = setup(len, 1);
        let plan = net.plan(len).unwrap();
        group.throughput(Throughput::Elements(len as u64));
        group.bench_with_input(BenchmarkId::new("length", len), &len, |b, _| {
            b.iter(|| net.logits(&mut Eager, &store, &plan, &samples));
        });
    }
    group.finish();
}

criterion_group!(benches, gradient_step, evaluation, forward);
criterion_main!(benches);
