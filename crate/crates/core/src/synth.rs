//! Synthetic trace generation from a fitted model.
//!
//! A hidden state path is simulated from the HMM, each emitted cluster id is
//! expanded back into a (reads, writes) bin by sampling the cluster's
//! bivariate normal, and negative draws are rejected so bins stay physical.
//! Bin values are rounded half-up to whole blocks. Generation is fully
//! deterministic for a given seed: the state path and the bin sampler consume
//! independent substreams of the same seed.

use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cluster::{ClusterModel, ClusterStats};
use crate::hmm::{simulate, Hmm};
use crate::trace::{Bin, BinnedTrace};

pub const DEFAULT_MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generated trace must have at least one bin")]
    EmptyLength,
    #[error("no non-negative sample after {0} draws")]
    RejectionBudgetExceeded(usize),
    #[error("model emits {model_m} symbols but the cluster alphabet has {clusters_m}")]
    ModelMismatch { model_m: usize, clusters_m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    /// Number of bins to generate; must be >= 1.
    pub length: usize,
    pub seed: u64,
    /// Width stamped on the generated trace, microseconds.
    pub bin_width_us: u64,
    /// Rejection-sampling budget per bin before falling back to clamping.
    pub max_rejections: usize,
}

impl GenConfig {
    pub fn new(length: usize, seed: u64, bin_width_us: u64) -> Self {
        GenConfig { length, seed, bin_width_us, max_rejections: DEFAULT_MAX_REJECTIONS }
    }
}

/// Round half-up to a block count; negative values clamp to zero.
fn to_blocks(v: f64) -> u64 {
    v.max(0.0).round() as u64
}

/// Lower-triangular factor of [[sr^2, cov], [cov, sw^2]]. A covariance that
/// rounding pushed past |cov| <= sr*sw is repaired by dropping the
/// correlation.
fn cholesky_2x2(stats: &ClusterStats) -> (f64, f64, f64) {
    let (sr, sw) = stats.std;
    let mut cov = stats.cov_rw;
    if cov * cov > sr * sr * sw * sw {
        warn!(
            "cluster {}: cov_rw {} exceeds std product {}; dropping correlation",
            stats.id,
            cov,
            sr * sw
        );
        cov = 0.0;
    }
    if sr == 0.0 {
        // cov is forced to 0 by the bound above.
        return (0.0, 0.0, sw);
    }
    let l21 = cov / sr;
    (sr, l21, (sw * sw - l21 * l21).max(0.0).sqrt())
}

/// Draws one (reads, writes) bin from the cluster's truncated bivariate
/// normal: the singleton cluster emits exactly (0,0), a zero-spread cluster
/// emits its rounded centroid, and everything else rejection-samples
/// N(centroid, cov) until both components are non-negative.
pub fn sample_bin(
    stats: &ClusterStats,
    max_rejections: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(u64, u64), SynthError> {
    if stats.singleton_zero {
        return Ok((0, 0));
    }
    if stats.std == (0.0, 0.0) {
        return Ok((to_blocks(stats.centroid.0), to_blocks(stats.centroid.1)));
    }
    let (l11, l21, l22) = cholesky_2x2(stats);
    for _ in 0..max_rejections {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x = stats.centroid.0 + l11 * z1;
        let y = stats.centroid.1 + l21 * z1 + l22 * z2;
        if x >= 0.0 && y >= 0.0 {
            return Ok((to_blocks(x), to_blocks(y)));
        }
    }
    Err(SynthError::RejectionBudgetExceeded(max_rejections))
}

/// Derives independent per-replicate seeds from one master seed, the same
/// convention the validation and queueing comparisons use internally.
pub fn replicate_seeds(master: u64, count: usize) -> Vec<u64> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut seeder = rand_chacha::ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| seeder.gen()).collect()
}

/// Simulates a hidden path from the model and expands every emitted cluster
/// id into a bin. A bin whose rejection budget runs out is clamped at zero
/// component-wise (and logged) rather than aborting the trace.
pub fn generate_trace(
    hmm: &Hmm,
    clusters: &ClusterModel,
    cfg: &GenConfig,
) -> Result<BinnedTrace, SynthError> {
    if cfg.length == 0 {
        return Err(SynthError::EmptyLength);
    }
    if hmm.m != clusters.alphabet_size() {
        return Err(SynthError::ModelMismatch {
            model_m: hmm.m,
            clusters_m: clusters.alphabet_size(),
        });
    }

    let (_, obs) = simulate(hmm, cfg.length, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut bins = Vec::with_capacity(cfg.length);
    for &sym in &obs.obs {
        let stats = &clusters.clusters[sym];
        let bin = match sample_bin(stats, cfg.max_rejections, &mut rng) {
            Ok((r, w)) => Bin::new(r, w),
            Err(SynthError::RejectionBudgetExceeded(_)) => {
                warn!(
                    "cluster {}: rejection budget exhausted, clamping at zero",
                    stats.id
                );
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let (l11, l21, l22) = cholesky_2x2(stats);
                let x = stats.centroid.0 + l11 * z1;
                let y = stats.centroid.1 + l21 * z1 + l22 * z2;
                Bin::new(to_blocks(x), to_blocks(y))
            }
            Err(other) => return Err(other),
        };
        bins.push(bin);
    }
    Ok(BinnedTrace::new(cfg.bin_width_us, bins))
}
