//! Markov-arrival-process derivation: turns a fitted chain plus its decoded
//! state path into a continuous-time generator matrix with per-state IO
//! rates, suitable for feeding analytic queueing models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::BinnedTrace;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("state {0} never appears on the decoded path")]
    MissingState(usize),
    #[error("state {0} has no outgoing transition mass")]
    AbsorbingState(usize),
    #[error("path length {path} does not match bin count {bins}")]
    LengthMismatch { path: usize, bins: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Mean sojourn (in bins) per state as measured on a decoded path, together
/// with how many distinct runs contributed. `mean_run[i]` is `None` when the
/// state never appears.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthStats {
    pub mean_run: Vec<Option<f64>>,
    pub run_counts: Vec<usize>,
}

/// Splits a state path into maximal runs of equal states and averages the
/// run lengths per state.
pub fn run_lengths(path: &[usize], r: usize) -> RunLengthStats {
    let mut total = vec![0usize; r];
    let mut count = vec![0usize; r];
    let mut i = 0;
    while i < path.len() {
        let state = path[i];
        assert!(state < r, "path state {state} out of range for {r} states");
        let mut j = i + 1;
        while j < path.len() && path[j] == state {
            j += 1;
        }
        total[state] += j - i;
        count[state] += 1;
        i = j;
    }
    let mean_run = (0..r)
        .map(|s| if count[s] > 0 { Some(total[s] as f64 / count[s] as f64) } else { None })
        .collect();
    RunLengthStats { mean_run, run_counts: count }
}

/// Sojourn lengths implied by the transition matrix alone, 1/(1-q_ii) bins.
/// Purely diagnostic: the generator derivation uses measured runs instead,
/// which stay finite even for nearly sticky states.
pub fn geometric_run_lengths(q: &[Vec<f64>]) -> Vec<f64> {
    q.iter().enumerate().map(|(i, row)| 1.0 / (1.0 - row[i])).collect()
}

/// How off-diagonal generator entries are formed from transition
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorVariant {
    /// Jump probabilities are the transition row with the diagonal removed
    /// and renormalized, so each state's total exit rate is exactly
    /// 1/(bin_width * mean_run).
    #[default]
    Renormalized,
    /// Off-diagonal entries are q_ij/(bin_width * mean_run) verbatim. The
    /// implied holding time then exceeds bin_width * mean_run by the factor
    /// 1/(1-q_ii).
    RawQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRates {
    pub read_bps: f64,
    pub write_bps: f64,
}

/// Continuous-time arrival model: generator `A` (rows sum to zero), expected
/// holding time per state, and the block rates each state emits while held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub bin_width_s: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub holding_mean_s: Vec<f64>,
    pub rates: Vec<StateRates>,
    pub labels: Vec<String>,
}

impl MapModel {
    pub fn num_states(&self) -> usize {
        self.a.len()
    }
}

/// Builds the generator matrix from a transition matrix and measured run
/// lengths. Rates are left at zero; use [`state_rates`] or [`derive_map`] to
/// fill them. Fails if a state never appears on the path or has no exit mass.
pub fn generators(
    q: &[Vec<f64>],
    runs: &RunLengthStats,
    bin_width_s: f64,
    variant: GeneratorVariant,
) -> Result<MapModel, MapError> {
    let r = q.len();
    if bin_width_s <= 0.0 || !bin_width_s.is_finite() {
        return Err(MapError::InvalidParameter(format!("bin width {bin_width_s} s")));
    }
    if runs.mean_run.len() != r {
        return Err(MapError::InvalidParameter(format!(
            "run stats cover {} states, transition matrix has {r}",
            runs.mean_run.len()
        )));
    }

    let mut a = vec![vec![0.0; r]; r];
    let mut holding = vec![0.0; r];
    for i in 0..r {
        let m_i = runs.mean_run[i].ok_or(MapError::MissingState(i))?;
        let exit = 1.0 / (bin_width_s * m_i);
        let off_mass: f64 = (0..r).filter(|&j| j != i).map(|j| q[i][j]).sum();
        if off_mass <= 1e-12 {
            return Err(MapError::AbsorbingState(i));
        }
        for j in 0..r {
            if j == i {
                continue;
            }
            a[i][j] = match variant {
                GeneratorVariant::Renormalized => exit * q[i][j] / off_mass,
                GeneratorVariant::RawQ => q[i][j] / (bin_width_s * m_i),
            };
        }
        let row_exit: f64 = (0..r).filter(|&j| j != i).map(|j| a[i][j]).sum();
        a[i][i] = -row_exit;
        holding[i] = 1.0 / row_exit;
    }

    Ok(MapModel {
        bin_width_s,
        a,
        holding_mean_s: holding,
        rates: vec![StateRates { read_bps: 0.0, write_bps: 0.0 }; r],
        labels: (0..r).map(|i| format!("state_{i}")).collect(),
    })
}

/// Mean read/write blocks per second emitted while the chain sits in each
/// state, from a decoded path aligned with the binned trace. States absent
/// from the path report zero.
pub fn state_rates(
    binned: &BinnedTrace,
    path: &[usize],
    bin_width_s: f64,
    r: usize,
) -> Result<Vec<StateRates>, MapError> {
    if path.len() != binned.len() {
        return Err(MapError::LengthMismatch { path: path.len(), bins: binned.len() });
    }
    if bin_width_s <= 0.0 || !bin_width_s.is_finite() {
        return Err(MapError::InvalidParameter(format!("bin width {bin_width_s} s")));
    }
    let mut reads = vec![0.0f64; r];
    let mut writes = vec![0.0f64; r];
    let mut bins_in = vec![0usize; r];
    for (bin, &state) in binned.bins.iter().zip(path) {
        assert!(state < r, "path state {state} out of range for {r} states");
        reads[state] += bin.reads as f64;
        writes[state] += bin.writes as f64;
        bins_in[state] += 1;
    }
    Ok((0..r)
        .map(|s| {
            if bins_in[s] == 0 {
                StateRates { read_bps: 0.0, write_bps: 0.0 }
            } else {
                let denom = bins_in[s] as f64 * bin_width_s;
                StateRates { read_bps: reads[s] / denom, write_bps: writes[s] / denom }
            }
        })
        .collect())
}

/// One-call derivation: run lengths from the path, generator from the
/// transition matrix, rates from the trace.
pub fn derive_map(
    binned: &BinnedTrace,
    path: &[usize],
    q: &[Vec<f64>],
    bin_width_s: f64,
    variant: GeneratorVariant,
) -> Result<MapModel, MapError> {
    let r = q.len();
    let runs = run_lengths(path, r);
    let mut map = generators(q, &runs, bin_width_s, variant)?;
    map.rates = state_rates(binned, path, bin_width_s, r)?;
    Ok(map)
}

/// Write pages per erase block: an erase is due once per this many writes.
pub const ERASE_BLOCK_WRITES: f64 = 64.0;

/// Appends an erase state fed from the embedded jump chain: every state that
/// can jump to `write_state` gets an extra jump to erase with `ratio` times
/// that probability (rows renormalized, so erase entries per direct write
/// entry equal `ratio` exactly), and erase always jumps back to the write
/// state. Holding times of existing states are unchanged. The erase holding
/// time defaults to `holding[write_state] * ratio * 64`, which keeps the time
/// budget of one erase per 64 writes; with the natural ratio 1/64 that is
/// simply the write state's own holding time.
pub fn add_erase_state(
    map: &MapModel,
    write_state: usize,
    ratio: f64,
    erase_holding_s: Option<f64>,
) -> Result<MapModel, MapError> {
    let r = map.num_states();
    if write_state >= r {
        return Err(MapError::MissingState(write_state));
    }
    if ratio <= 0.0 || !ratio.is_finite() {
        return Err(MapError::InvalidParameter(format!("erase ratio {ratio}")));
    }
    let h_e = match erase_holding_s {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(MapError::InvalidParameter(format!("erase holding {h} s"))),
        None => map.holding_mean_s[write_state] * ratio * ERASE_BLOCK_WRITES,
    };

    let e = r;
    let mut a = vec![vec![0.0; r + 1]; r + 1];
    for i in 0..r {
        let exit = -map.a[i][i];
        if exit <= 0.0 {
            continue;
        }
        // The embedded jump chain has no self-loops: the write state's own
        // row carries no erase detour.
        let p_to_write =
            if i == write_state { 0.0 } else { map.a[i][write_state] / exit };
        let scale = 1.0 / (1.0 + ratio * p_to_write);
        for j in 0..r {
            if j != i {
                a[i][j] = map.a[i][j] * scale;
            }
        }
        a[i][e] = exit * ratio * p_to_write * scale;
        a[i][i] = -exit;
    }
    a[e][write_state] = 1.0 / h_e;
    a[e][e] = -1.0 / h_e;

    let mut holding = map.holding_mean_s.clone();
    holding.push(h_e);
    let mut rates = map.rates.clone();
    rates.push(StateRates { read_bps: 0.0, write_bps: 0.0 });
    let mut labels = map.labels.clone();
    labels.push("erase".to_string());

    Ok(MapModel { bin_width_s: map.bin_width_s, a, holding_mean_s: holding, rates, labels })
}
