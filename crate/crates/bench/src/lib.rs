//! Shared inputs for the benchmark targets: deterministic synthetic traces
//! and observation sequences at a few sizes.

use iohmm_core::cluster::{fit_clusters, ClusterMode, ClusterModel};
use iohmm_core::fixtures::update_mix;
use iohmm_core::hmm::Hmm;
use iohmm_core::synth::{generate_trace, GenConfig};
use iohmm_core::trace::BinnedTrace;

pub const BIN_WIDTH_US: u64 = 5000;

/// An eight-cluster alphabet with well-separated levels, matching the
/// bundled three-state reference model's symbol count.
pub fn bench_clusters(binned: &BinnedTrace) -> ClusterModel {
    fit_clusters(binned, ClusterMode::Joint2D { k: 8 }, false, 17).expect("cluster fit")
}

/// A trace drawn from the bundled update-heavy reference model, long enough
/// to exercise the forward-backward inner loops.
pub fn bench_trace(length: usize, seed: u64) -> (Hmm, BinnedTrace) {
    let hmm = update_mix();
    let clusters = seed_clusters(&hmm);
    let cfg = GenConfig::new(length, seed, BIN_WIDTH_US);
    let trace = generate_trace(&hmm, &clusters, &cfg).expect("generate");
    (hmm, trace)
}

/// Eight hand-placed clusters (one per symbol of the reference model) so
/// generation does not depend on a prior clustering run.
pub fn seed_clusters(hmm: &Hmm) -> ClusterModel {
    use iohmm_core::cluster::ClusterStats;
    let centers = [
        (0.0, 0.0),
        (4.0, 0.0),
        (0.0, 8.0),
        (12.0, 2.0),
        (2.0, 24.0),
        (40.0, 10.0),
        (10.0, 60.0),
        (90.0, 90.0),
    ];
    let clusters = centers
        .iter()
        .enumerate()
        .map(|(id, &(r, w))| ClusterStats {
            id,
            centroid: (r, w),
            std: (r.sqrt() * 0.3, w.sqrt() * 0.3),
            cov_rw: 0.0,
            count: 1000,
            singleton_zero: id == 0,
        })
        .collect();
    let model = ClusterModel { mode: ClusterMode::Joint2D { k: hmm.m }, clusters };
    model.validate().expect("bench cluster model");
    model
}
