//! Whole-stage costs around the model: trace synthesis, alphabet
//! construction, and the queueing replay.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use iohmm_bench::{bench_clusters, bench_trace, seed_clusters, BIN_WIDTH_US};
use iohmm_core::fixtures::update_mix;
use iohmm_core::qsim::{simulate_queue, QueueSimConfig, Scheme, ServiceTimes};
use iohmm_core::synth::{generate_trace, GenConfig};

fn synthesis(c: &mut Criterion) {
    let hmm = update_mix();
    let clusters = seed_clusters(&hmm);
    let mut group = c.benchmark_group("generate_trace");
    for &n in &[10_000usize, 40_000] {
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("bins", n), &n, |b, &n| {
            b.iter(|| {
                let cfg = GenConfig::new(n, 7, BIN_WIDTH_US);
                generate_trace(&hmm, &clusters, &cfg).unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let (_, trace) = bench_trace(20_000, 904);
    c.bench_function("fit_clusters_joint8_20k", |b| b.iter(|| bench_clusters(&trace)));
}

fn queueing(c: &mut Criterion) {
    let (_, trace) = bench_trace(20_000, 905);
    let cfg = QueueSimConfig::new(
        ServiceTimes { read_us: 20.0, write_us: 25.0, erase_us: 100.0 },
        Scheme::PreemptiveRead,
    );
    c.bench_function("simulate_queue_20k", |b| b.iter(|| simulate_queue(&trace, &cfg).unwrap()));
}

criterion_group!(benches, synthesis, clustering, queueing);
criterion_main!(benches);
