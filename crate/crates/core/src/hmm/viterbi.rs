//! Most-likely hidden path by log-domain dynamic programming.
//!
//! The recursion maximizes the joint log probability of path and
//! observations:
//!
//! ```text
//! m_0(i)   = ln(nu_i) + ln(g_i(s_0))
//! m_t+1(j) = max_i [ m_t(i) + ln(q_ij) ] + ln(g_j(s_t+1))
//! ```
//!
//! Transition probabilities enter in log space like everything else; zero
//! entries become -inf and drop out of the max. Ties always resolve to the
//! lowest state id, so decoded paths are stable across runs.

use super::{Hmm, HmmError};
use crate::cluster::ObservationSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// Final maximized score: the joint log probability of the returned path
    /// and the observations. Never exceeds the observation log likelihood.
    pub max_log_posterior: f64,
}

/// Decodes the most probable state path. O(T r^2) time, O(T r) memory for the
/// backpointers.
pub fn viterbi(hmm: &Hmm, obs: &ObservationSequence) -> Result<ViterbiPath, HmmError> {
    assert!(!obs.is_empty(), "observation sequence must be non-empty");
    hmm.check_alphabet(obs)?;
    let (r, t_len) = (hmm.r, obs.len());
    let s = &obs.obs;

    let log_q: Vec<Vec<f64>> =
        hmm.q.iter().map(|row| row.iter().map(|&p| p.ln()).collect()).collect();
    let log_g: Vec<Vec<f64>> =
        hmm.g.iter().map(|row| row.iter().map(|&p| p.ln()).collect()).collect();

    let mut score: Vec<f64> = (0..r).map(|i| hmm.nu[i].ln() + log_g[i][s[0]]).collect();
    let mut next = vec![0.0; r];
    let mut backptr = vec![0usize; t_len * r];

    if score.iter().all(|&v| v == f64::NEG_INFINITY) {
        return Err(HmmError::ImpossibleObservation { step: 0 });
    }

    for t in 1..t_len {
        for j in 0..r {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for i in 0..r {
                let cand = score[i] + log_q[i][j];
                // Strict > keeps the lowest predecessor on ties.
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            next[j] = best + log_g[j][s[t]];
            backptr[t * r + j] = best_i;
        }
        std::mem::swap(&mut score, &mut next);
        if score.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(HmmError::ImpossibleObservation { step: t });
        }
    }

    let mut best_state = 0;
    let mut best = f64::NEG_INFINITY;
    for (j, &v) in score.iter().enumerate() {
        if v > best {
            best = v;
            best_state = j;
        }
    }

    let mut states = vec![0usize; t_len];
    states[t_len - 1] = best_state;
    for t in (1..t_len).rev() {
        states[t - 1] = backptr[t * r + states[t]];
    }

    Ok(ViterbiPath { states, max_log_posterior: best })
}
