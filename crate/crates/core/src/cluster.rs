//! Quantization of (reads, writes) bins into a finite observation alphabet.
//!
//! Binned traces are clustered with k-means, either jointly in the plane
//! (`Joint2D`) or per dimension with a product alphabet
//! (`PerDimensionProduct`), optionally reserving a dedicated singleton cluster
//! for exactly-(0,0) bins so idle time gets its own symbol. Each cluster keeps
//! enough moments (centroid, per-dimension std, read/write covariance) for the
//! synthesizer to re-emit plausible bins from a cluster id alone.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::BinnedTrace;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least {needed} distinct points, have {have}")]
    TooFewDistinctPoints { needed: usize, have: usize },
    #[error("invalid cluster model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMode {
    /// k-means on (reads, writes) points in the plane.
    #[serde(rename = "joint2d")]
    Joint2D { k: usize },
    /// Independent 1-D k-means per dimension; the alphabet is the
    /// k_r x k_w product of read and write levels.
    #[serde(rename = "product")]
    PerDimensionProduct { k_r: usize, k_w: usize },
}

/// Moments of one cluster, sufficient to re-generate members.
/// `std`/`cov_rw` are population moments over the members, so a single-member
/// cluster degenerates cleanly to a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub id: usize,
    /// (mean reads, mean writes), blocks per bin.
    pub centroid: (f64, f64),
    pub std: (f64, f64),
    pub cov_rw: f64,
    pub count: usize,
    /// Reserved cluster holding exactly the (0,0) bins.
    pub singleton_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub mode: ClusterMode,
    pub clusters: Vec<ClusterStats>,
}

impl ClusterModel {
    /// Alphabet size: number of observation symbols downstream models see.
    pub fn alphabet_size(&self) -> usize {
        self.clusters.len()
    }

    pub fn singleton_id(&self) -> Option<usize> {
        self.clusters.iter().find(|c| c.singleton_zero).map(|c| c.id)
    }

    /// Structural checks applied to models loaded from files: dense ids in
    /// order, at most one singleton, zero std on singletons, and covariance
    /// bounded by the per-dimension deviations (Cauchy-Schwarz, with slack for
    /// values that round-tripped through text).
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.clusters.is_empty() {
            return Err(ClusterError::InvalidModel("no clusters".into()));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id != i {
                return Err(ClusterError::InvalidModel(format!(
                    "cluster at position {i} has id {}",
                    c.id
                )));
            }
            if c.singleton_zero && (c.std != (0.0, 0.0) || c.centroid != (0.0, 0.0)) {
                return Err(ClusterError::InvalidModel(
                    "singleton cluster must be the (0,0) point mass".into(),
                ));
            }
            if !(c.std.0 >= 0.0 && c.std.1 >= 0.0) {
                return Err(ClusterError::InvalidModel("negative std".into()));
            }
            if c.cov_rw.abs() > c.std.0 * c.std.1 + 1e-9 {
                return Err(ClusterError::InvalidModel(format!(
                    "cluster {i}: |cov_rw| exceeds std product",
                    )));
            }
        }
        if self.clusters.iter().filter(|c| c.singleton_zero).count() > 1 {
            return Err(ClusterError::InvalidModel("multiple singletons".into()));
        }
        Ok(())
    }
}

/// Cluster ids per bin, ready to use as an HMM symbol sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSequence {
    /// Alphabet size; every entry of `obs` is < m.
    pub m: usize,
    pub obs: Vec<usize>,
}

impl ObservationSequence {
    pub fn new(m: usize, obs: Vec<usize>) -> Self {
        assert!(obs.iter().all(|&s| s < m), "symbol out of alphabet range");
        ObservationSequence { m, obs }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for d in 0..D {
        let diff = a[d] - b[d];
        s += diff * diff;
    }
    s
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform over points, each further one
/// drawn with probability proportional to the squared distance to the nearest
/// centroid chosen so far.
fn seed_plus_plus<const D: usize>(
    points: &[[f64; D]],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; D]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())]);
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        // total > 0 because the caller guarantees more distinct points than
        // centroids chosen so far.
        let mut u = rng.gen::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        centroids.push(points[pick]);
    }
    centroids
}

struct KmeansFit<const D: usize> {
    centroids: Vec<[f64; D]>,
    assignment: Vec<usize>,
    /// Within-cluster SSE after each Lloyd iteration; non-increasing.
    #[cfg_attr(not(test), allow(dead_code))]
    sse_trace: Vec<f64>,
}

/// Lloyd iterations from the given centroids. Converges when no assignment
/// changes; clusters that lose all members are re-seeded with the point
/// currently farthest from its own centroid.
fn lloyd<const D: usize>(
    points: &[[f64; D]],
    mut centroids: Vec<[f64; D]>,
    max_iter: usize,
) -> KmeansFit<D> {
    let k = centroids.len();
    let n = points.len();
    let mut assignment = vec![usize::MAX; n];
    let mut sse_trace = Vec::new();

    for _ in 0..max_iter {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();

        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        let mut claimed: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Re-seed the empty cluster with the worst-fit point.
            let far = (0..n)
                .filter(|i| !claimed.contains(i))
                .max_by(|&a, &b| {
                    let da = sq_dist(&points[a], &centroids[next[a]]);
                    let db = sq_dist(&points[b], &centroids[next[b]]);
                    da.partial_cmp(&db).unwrap()
                })
                .expect("fewer points than clusters");
            counts[next[far]] -= 1;
            counts[c] += 1;
            centroids[c] = points[far];
            next[far] = c;
            claimed.push(far);
        }

        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }

        let mut sums = vec![[0.0; D]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for d in 0..D {
                sums[a][d] += p[d];
            }
        }
        for c in 0..k {
            for d in 0..D {
                centroids[c][d] = sums[c][d] / counts[c] as f64;
            }
        }

        let sse: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        sse_trace.push(sse);
    }

    KmeansFit { centroids, assignment, sse_trace }
}

const KMEANS_MAX_ITER: usize = 300;

fn kmeans<const D: usize>(points: &[[f64; D]], k: usize, rng: &mut ChaCha8Rng) -> KmeansFit<D> {
    let centroids = seed_plus_plus(points, k, rng);
    lloyd(points, centroids, KMEANS_MAX_ITER)
}

fn population_stats(members: &[[f64; 2]]) -> ((f64, f64), (f64, f64), f64) {
    let n = members.len() as f64;
    let mr = members.iter().map(|p| p[0]).sum::<f64>() / n;
    let mw = members.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut vr = 0.0;
    let mut vw = 0.0;
    let mut cov = 0.0;
    for p in members {
        vr += (p[0] - mr) * (p[0] - mr);
        vw += (p[1] - mw) * (p[1] - mw);
        cov += (p[0] - mr) * (p[1] - mw);
    }
    ((mr, mw), ((vr / n).sqrt(), (vw / n).sqrt()), cov / n)
}

/// Fits the observation alphabet to a binned trace.
///
/// With `reserve_zero_singleton`, exactly-(0,0) bins are pulled out first and
/// given a dedicated final cluster id; k-means sees only the active bins.
/// Joint clusters are ordered by centroid (reads, then writes); product
/// clusters are ordered read-level-major with ascending levels, id =
/// read_level * k_w + write_level. Deterministic for a given seed.
pub fn fit_clusters(
    binned: &BinnedTrace,
    mode: ClusterMode,
    reserve_zero_singleton: bool,
    seed: u64,
) -> Result<ClusterModel, ClusterError> {
    let mut zeros = 0usize;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(binned.len());
    for b in &binned.bins {
        if reserve_zero_singleton && b.reads == 0 && b.writes == 0 {
            zeros += 1;
        } else {
            points.push([b.reads as f64, b.writes as f64]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters = match mode {
        ClusterMode::Joint2D { k } => {
            assert!(k >= 1, "k must be at least 1");
            let distinct: BTreeSet<(u64, u64)> =
                points.iter().map(|p| (p[0] as u64, p[1] as u64)).collect();
            if distinct.len() < k {
                return Err(ClusterError::TooFewDistinctPoints { needed: k, have: distinct.len() });
            }
            let fit = kmeans(&points, k, &mut rng);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| {
                let (ca, cb) = (&fit.centroids[a], &fit.centroids[b]);
                (ca[0], ca[1]).partial_cmp(&(cb[0], cb[1])).unwrap()
            });
            order
                .iter()
                .enumerate()
                .map(|(id, &orig)| {
                    let members: Vec<[f64; 2]> = points
                        .iter()
                        .zip(&fit.assignment)
                        .filter(|(_, &a)| a == orig)
                        .map(|(p, _)| *p)
                        .collect();
                    let (centroid, std, cov_rw) = population_stats(&members);
                    ClusterStats {
                        id,
                        centroid,
                        std,
                        cov_rw,
                        count: members.len(),
                        singleton_zero: false,
                    }
                })
                .collect::<Vec<_>>()
        }
        ClusterMode::PerDimensionProduct { k_r, k_w } => {
            assert!(k_r >= 1 && k_w >= 1, "k_r and k_w must be at least 1");
            let reads: Vec<[f64; 1]> = points.iter().map(|p| [p[0]]).collect();
            let writes: Vec<[f64; 1]> = points.iter().map(|p| [p[1]]).collect();
            let distinct_r: BTreeSet<u64> = reads.iter().map(|p| p[0] as u64).collect();
            let distinct_w: BTreeSet<u64> = writes.iter().map(|p| p[0] as u64).collect();
            if distinct_r.len() < k_r {
                return Err(ClusterError::TooFewDistinctPoints {
                    needed: k_r,
                    have: distinct_r.len(),
                });
            }
            if distinct_w.len() < k_w {
                return Err(ClusterError::TooFewDistinctPoints {
                    needed: k_w,
                    have: distinct_w.len(),
                });
            }
            let fit_r = kmeans(&reads, k_r, &mut rng);
            let fit_w = kmeans(&writes, k_w, &mut rng);

            // Relabel both level sets in ascending centroid order so product
            // ids are stable and readable.
            let rank = |fit: &KmeansFit<1>| {
                let k = fit.centroids.len();
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&a, &b| {
                    fit.centroids[a][0].partial_cmp(&fit.centroids[b][0]).unwrap()
                });
                let mut rank = vec![0usize; k];
                for (new, &orig) in order.iter().enumerate() {
                    rank[orig] = new;
                }
                rank
            };
            let rank_r = rank(&fit_r);
            let rank_w = rank(&fit_w);
            let level_r: Vec<f64> = {
                let mut v = vec![0.0; k_r];
                for (orig, &new) in rank_r.iter().enumerate() {
                    v[new] = fit_r.centroids[orig][0];
                }
                v
            };
            let level_w: Vec<f64> = {
                let mut v = vec![0.0; k_w];
                for (orig, &new) in rank_w.iter().enumerate() {
                    v[new] = fit_w.centroids[orig][0];
                }
                v
            };

            let mut members: Vec<Vec<[f64; 2]>> = vec![Vec::new(); k_r * k_w];
            for (i, p) in points.iter().enumerate() {
                let cell = rank_r[fit_r.assignment[i]] * k_w + rank_w[fit_w.assignment[i]];
                members[cell].push(*p);
            }
            members
                .iter()
                .enumerate()
                .map(|(id, ms)| {
                    if ms.is_empty() {
                        // Cell never observed: fall back to the product of the
                        // 1-D level centroids as a point mass.
                        ClusterStats {
                            id,
                            centroid: (level_r[id / k_w], level_w[id % k_w]),
                            std: (0.0, 0.0),
                            cov_rw: 0.0,
                            count: 0,
                            singleton_zero: false,
                        }
                    } else {
                        let (centroid, std, cov_rw) = population_stats(ms);
                        ClusterStats {
                            id,
                            centroid,
                            std,
                            cov_rw,
                            count: ms.len(),
                            singleton_zero: false,
                        }
                    }
                })
                .collect::<Vec<_>>()
        }
    };

    if reserve_zero_singleton {
        clusters.push(ClusterStats {
            id: clusters.len(),
            centroid: (0.0, 0.0),
            std: (0.0, 0.0),
            cov_rw: 0.0,
            count: zeros,
            singleton_zero: true,
        });
    }

    Ok(ClusterModel { mode, clusters })
}

/// Maps a (reads, writes) point to a cluster id: an exact (0,0) goes to the
/// reserved singleton when one exists; anything else goes to the nearest
/// non-singleton centroid by squared Euclidean distance (ties to the lowest
/// id).
pub fn assign(model: &ClusterModel, point: (f64, f64)) -> usize {
    if let Some(id) = model.singleton_id() {
        if point == (0.0, 0.0) {
            return id;
        }
    }
    let p = [point.0, point.1];
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for c in &model.clusters {
        if c.singleton_zero {
            continue;
        }
        let d = sq_dist(&p, &[c.centroid.0, c.centroid.1]);
        if d < best_d {
            best_d = d;
            best = Some(c.id);
        }
    }
    // A model whose only cluster is the singleton can still absorb anything.
    best.or(model.singleton_id()).expect("empty cluster model")
}

/// Element-wise [`assign`] over a binned trace.
pub fn observation_sequence(model: &ClusterModel, binned: &BinnedTrace) -> ObservationSequence {
    let obs = binned
        .bins
        .iter()
        .map(|b| assign(model, (b.reads as f64, b.writes as f64)))
        .collect();
    ObservationSequence::new(model.alphabet_size(), obs)
}
