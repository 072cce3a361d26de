//! Model-fitting hot paths: one re-estimation sweep (the per-iteration cost
//! of fitting) across trace lengths and state counts, and path decoding.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use iohmm_bench::{bench_trace, seed_clusters};
use iohmm_core::cluster::observation_sequence;
use iohmm_core::hmm::{baum_welch_step, default_init, viterbi};

fn refit_step_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("baum_welch_step");
    for &n in &[10_000usize, 20_000, 40_000] {
        let (gen_hmm, trace) = bench_trace(n, 901);
        let clusters = seed_clusters(&gen_hmm);
        let obs = observation_sequence(&clusters, &trace);
        let hmm = default_init(3, gen_hmm.m, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("n", n), &n, |b, _| {
            b.iter(|| baum_welch_step(&hmm, &obs).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("baum_welch_step_states");
    let (gen_hmm, trace) = bench_trace(20_000, 902);
    let clusters = seed_clusters(&gen_hmm);
    let obs = observation_sequence(&clusters, &trace);
    for &r in &[2usize, 4, 8] {
        let hmm = default_init(r, gen_hmm.m, 1);
        group.bench_with_input(BenchmarkId::new("r", r), &r, |b, _| {
            b.iter(|| baum_welch_step(&hmm, &obs).unwrap())
        });
    }
    group.finish();
}

fn decode(c: &mut Criterion) {
    let (hmm, trace) = bench_trace(40_000, 903);
    let clusters = seed_clusters(&hmm);
    let obs = observation_sequence(&clusters, &trace);
    c.bench_function("viterbi_40k", |b| b.iter(|| viterbi(&hmm, &obs).unwrap()));
}

criterion_group!(benches, refit_step_scaling, decode);
criterion_main!(benches);
