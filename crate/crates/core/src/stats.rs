//! Fidelity statistics: trace moments, autocorrelation, and batch-means
//! confidence bands for judging synthetic traces against the originals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::cluster::ClusterModel;
use crate::hmm::Hmm;
use crate::synth::{generate_trace, GenConfig, SynthError};
use crate::trace::BinnedTrace;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// First and second moments of a binned trace. Standard deviations use the
/// n-1 denominator. The read/write correlation is `None` when either side has
/// zero variance (it is undefined, not zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n: usize,
    pub read_mean: f64,
    pub read_std: f64,
    pub write_mean: f64,
    pub write_std: f64,
    pub rw_correlation: Option<f64>,
}

/// Welford accumulation of mean, variance, and cross moments in one pass.
fn moments(binned: &BinnedTrace) -> (f64, f64, f64, f64, f64) {
    let mut n = 0.0f64;
    let (mut mean_r, mut mean_w) = (0.0f64, 0.0f64);
    let (mut m2_r, mut m2_w, mut c_rw) = (0.0f64, 0.0f64, 0.0f64);
    for b in &binned.bins {
        let (r, w) = (b.reads as f64, b.writes as f64);
        n += 1.0;
        let dr = r - mean_r;
        mean_r += dr / n;
        let dw = w - mean_w;
        mean_w += dw / n;
        m2_r += dr * (r - mean_r);
        m2_w += dw * (w - mean_w);
        c_rw += dr * (w - mean_w);
    }
    (mean_r, mean_w, m2_r, m2_w, c_rw)
}

/// Moment summary of a binned trace. A single-bin trace reports zero spread.
pub fn summary(binned: &BinnedTrace) -> StatsReport {
    assert!(!binned.is_empty(), "summary of an empty trace");
    let n = binned.len();
    let (mean_r, mean_w, m2_r, m2_w, c_rw) = moments(binned);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let var_r = m2_r / denom;
    let var_w = m2_w / denom;
    let rw_correlation = if m2_r > 0.0 && m2_w > 0.0 {
        Some(c_rw / (m2_r.sqrt() * m2_w.sqrt()))
    } else {
        None
    };
    StatsReport {
        n,
        read_mean: mean_r,
        read_std: var_r.sqrt(),
        write_mean: mean_w,
        write_std: var_w.sqrt(),
        rw_correlation,
    }
}

/// Sample autocorrelation with a single global mean and the biased (full-n)
/// denominator:
///
/// ```text
/// rho(h) = sum_{t<n-h} (x_t - xbar)(x_{t+h} - xbar) / sum_t (x_t - xbar)^2
/// ```
///
/// Returns lags 0..=max_lag (entry 0 is always 1). `max_lag` must satisfy
/// 1 <= max_lag < series length.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    assert!(max_lag >= 1, "max_lag must be at least 1");
    assert!(max_lag < series.len(), "max_lag must be below the series length");
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|&x| (x - mean) * (x - mean)).sum();
    if denom <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let mut rho = Vec::with_capacity(max_lag + 1);
    for h in 0..=max_lag {
        let num: f64 =
            (0..n - h).map(|t| (series[t] - mean) * (series[t + h] - mean)).sum();
        rho.push(num / denom);
    }
    Ok(rho)
}

/// Two-sided confidence interval on a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub batches: usize,
}

impl ConfidenceBand {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Batch-means interval over independent replicate means: mean +/-
/// t_{(1+level)/2, k-1} * s / sqrt(k). Identical replicates give a zero-width
/// band.
pub fn batch_means_ci(values: &[f64], level: f64) -> Result<ConfidenceBand, StatsError> {
    assert!(level > 0.0 && level < 1.0, "level must be in (0,1)");
    let k = values.len();
    if k < 2 {
        return Err(StatsError::TooFewReplicates(k));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.5 * (1.0 + level));
    let half = t * (var / k as f64).sqrt();
    Ok(ConfidenceBand { lo: mean - half, hi: mean + half, level, batches: k })
}

/// One fidelity metric: the raw trace's value against the replicate band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBand {
    pub name: String,
    pub raw: f64,
    pub hmm_mean: f64,
    pub band: ConfidenceBand,
    pub inside: bool,
}

/// Raw-vs-pooled-synthetic autocorrelation curves, lags 0..=max_lag. Arrays
/// are empty for a side whose series has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcfComparison {
    pub max_lag: usize,
    pub reads_raw: Vec<f64>,
    pub reads_hmm: Vec<f64>,
    pub writes_raw: Vec<f64>,
    pub writes_hmm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub replicates: usize,
    pub level: f64,
    pub metrics: Vec<MetricBand>,
    /// Names of metrics whose raw value fell outside the replicate band.
    pub flagged: Vec<String>,
    pub acf: AcfComparison,
    pub passed: bool,
}

fn acf_or_empty(series: &[f64], max_lag: usize) -> Vec<f64> {
    match acf(series, max_lag) {
        Ok(v) => v,
        Err(StatsError::ZeroVariance) => Vec::new(),
        Err(e) => unreachable!("acf only fails on zero variance: {e}"),
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Generates `replicates` synthetic traces the same length as `raw` and
/// compares moment metrics (read/write mean and std, and the read/write
/// correlation when defined) against batch-means bands, plus raw and pooled
/// synthetic autocorrelation curves. A metric outside its band is flagged;
/// `passed` means nothing was flagged.
pub fn validate(
    raw: &BinnedTrace,
    hmm: &Hmm,
    clusters: &ClusterModel,
    replicates: usize,
    level: f64,
    max_lag: usize,
    seed: u64,
) -> Result<ValidationReport, StatsError> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    if replicates < 2 {
        return Err(StatsError::TooFewReplicates(replicates));
    }
    let raw_stats = summary(raw);
    let max_lag = max_lag.min(raw.len().saturating_sub(1)).max(1);

    let mut seeder = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rep_stats = Vec::with_capacity(replicates);
    let mut acf_reads: Vec<Vec<f64>> = Vec::new();
    let mut acf_writes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..replicates {
        let cfg = GenConfig::new(raw.len(), seeder.gen(), raw.bin_width_us);
        let synthetic = generate_trace(hmm, clusters, &cfg)?;
        rep_stats.push(summary(&synthetic));
        let reads: Vec<f64> = synthetic.bins.iter().map(|b| b.reads as f64).collect();
        let writes: Vec<f64> = synthetic.bins.iter().map(|b| b.writes as f64).collect();
        let r = acf_or_empty(&reads, max_lag);
        if !r.is_empty() {
            acf_reads.push(r);
        }
        let w = acf_or_empty(&writes, max_lag);
        if !w.is_empty() {
            acf_writes.push(w);
        }
    }

    let mut metrics = Vec::new();
    let mut push_metric = |name: &str, raw_value: f64, reps: Vec<f64>| -> Result<(), StatsError> {
        let band = batch_means_ci(&reps, level)?;
        metrics.push(MetricBand {
            name: name.to_string(),
            raw: raw_value,
            hmm_mean: mean_of(&reps),
            inside: band.contains(raw_value),
            band,
        });
        Ok(())
    };

    push_metric("read_mean", raw_stats.read_mean, rep_stats.iter().map(|s| s.read_mean).collect())?;
    push_metric("read_std", raw_stats.read_std, rep_stats.iter().map(|s| s.read_std).collect())?;
    push_metric(
        "write_mean",
        raw_stats.write_mean,
        rep_stats.iter().map(|s| s.write_mean).collect(),
    )?;
    push_metric("write_std", raw_stats.write_std, rep_stats.iter().map(|s| s.write_std).collect())?;
    if let Some(raw_corr) = raw_stats.rw_correlation {
        let defined: Vec<f64> = rep_stats.iter().filter_map(|s| s.rw_correlation).collect();
        // Correlation is only comparable when enough replicates have it.
        if defined.len() >= 2 {
            push_metric("rw_correlation", raw_corr, defined)?;
        }
    }

    let pool = |curves: &[Vec<f64>]| -> Vec<f64> {
        if curves.is_empty() {
            return Vec::new();
        }
        (0..=max_lag)
            .map(|h| curves.iter().map(|c| c[h]).sum::<f64>() / curves.len() as f64)
            .collect()
    };
    let raw_reads: Vec<f64> = raw.bins.iter().map(|b| b.reads as f64).collect();
    let raw_writes: Vec<f64> = raw.bins.iter().map(|b| b.writes as f64).collect();
    let acf = AcfComparison {
        max_lag,
        reads_raw: acf_or_empty(&raw_reads, max_lag),
        reads_hmm: pool(&acf_reads),
        writes_raw: acf_or_empty(&raw_writes, max_lag),
        writes_hmm: pool(&acf_writes),
    };

    let flagged: Vec<String> =
        metrics.iter().filter(|m| !m.inside).map(|m| m.name.clone()).collect();
    let passed = flagged.is_empty();
    Ok(ValidationReport { replicates, level, metrics, flagged, acf, passed })
}
