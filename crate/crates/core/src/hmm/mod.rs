//! Discrete-observation hidden Markov models over cluster-id sequences.
//!
//! A model is (nu, Q, G): initial state distribution, state transition matrix,
//! and per-state emission distribution over the observation alphabet. The
//! smoother runs the scaled forward-backward recursions, renormalizing at
//! every step so sequences of a million bins stay inside f64 range; the log
//! likelihood falls out of the accumulated scale factors. Fitting
//! (`baum_welch`), decoding (`viterbi`), and simulation build on this.

mod fit;
mod viterbi;

pub use fit::{
    baum_welch, baum_welch_step, default_init, near_duplicate_states, sweep_states,
    DegenerateEvent, FitInit, FitOptions, FitResult, SweepEntry,
};
pub use viterbi::{viterbi, ViterbiPath};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ObservationSequence;

/// Row-stochasticity slack for stored models.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("{matrix} row {row} is not a probability distribution")]
    NotStochastic { matrix: &'static str, row: usize },
    #[error("inconsistent dimensions: {0}")]
    DimensionMismatch(String),
    #[error("alphabet size mismatch: model emits {model_m} symbols, sequence uses {obs_m}")]
    AlphabetMismatch { model_m: usize, obs_m: usize },
    /// The model assigns probability zero to the observation at `step`.
    #[error("observation at step {step} has probability zero under the model")]
    ImpossibleObservation { step: usize },
}

/// Hidden Markov model with `r` states over an alphabet of `m` symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hmm {
    pub r: usize,
    pub m: usize,
    /// Initial state distribution, length r.
    pub nu: Vec<f64>,
    /// r x r state transition matrix, rows sum to 1.
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    /// r x m emission matrix, rows sum to 1.
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

fn check_row(matrix: &'static str, row: usize, v: &[f64]) -> Result<(), HmmError> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|&p| !(0.0..=1.0 + STOCHASTIC_TOL).contains(&p))
        || (sum - 1.0).abs() > STOCHASTIC_TOL
    {
        return Err(HmmError::NotStochastic { matrix, row });
    }
    Ok(())
}

impl Hmm {
    /// Builds and validates a model; rows of Q and G and the nu vector must
    /// each sum to 1 within [`STOCHASTIC_TOL`].
    pub fn new(nu: Vec<f64>, q: Vec<Vec<f64>>, g: Vec<Vec<f64>>) -> Result<Self, HmmError> {
        let r = nu.len();
        let m = g.first().map_or(0, Vec::len);
        let hmm = Hmm { r, m, nu, q, g };
        hmm.validate()?;
        Ok(hmm)
    }

    pub fn validate(&self) -> Result<(), HmmError> {
        if self.r == 0 || self.m == 0 {
            return Err(HmmError::DimensionMismatch("r and m must be at least 1".into()));
        }
        if self.nu.len() != self.r || self.q.len() != self.r || self.g.len() != self.r {
            return Err(HmmError::DimensionMismatch(format!(
                "expected {} states, got nu={} Q={} G={}",
                self.r,
                self.nu.len(),
                self.q.len(),
                self.g.len()
            )));
        }
        if self.q.iter().any(|row| row.len() != self.r) {
            return Err(HmmError::DimensionMismatch("Q is not square".into()));
        }
        if self.g.iter().any(|row| row.len() != self.m) {
            return Err(HmmError::DimensionMismatch("ragged G".into()));
        }
        check_row("nu", 0, &self.nu)?;
        for (i, row) in self.q.iter().enumerate() {
            check_row("Q", i, row)?;
        }
        for (i, row) in self.g.iter().enumerate() {
            check_row("G", i, row)?;
        }
        Ok(())
    }

    fn check_alphabet(&self, obs: &ObservationSequence) -> Result<(), HmmError> {
        if obs.m != self.m {
            return Err(HmmError::AlphabetMismatch { model_m: self.m, obs_m: obs.m });
        }
        Ok(())
    }
}

/// Smoothed posteriors from one forward-backward pass over T observations:
/// per-step state posteriors `phi` (T rows), adjacent-pair posteriors
/// `phi_pair` (T-1 rows of r x r), the per-step normalizers `scale`, and the
/// observation log likelihood (the summed log normalizers).
pub struct SmoothingCache {
    r: usize,
    len: usize,
    pub log_likelihood: f64,
    phi: Vec<f64>,
    phi_pair: Vec<f64>,
    scale: Vec<f64>,
}

impl SmoothingCache {
    /// Number of observations T.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_states(&self) -> usize {
        self.r
    }

    /// P(state at t = j | all observations), as a length-r slice.
    pub fn phi(&self, t: usize) -> &[f64] {
        &self.phi[t * self.r..(t + 1) * self.r]
    }

    /// P(state at t = i, state at t+1 = j | all observations), row-major r x r.
    pub fn phi_pair(&self, t: usize) -> &[f64] {
        let rr = self.r * self.r;
        &self.phi_pair[t * rr..(t + 1) * rr]
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// One scaled forward pass; returns per-step normalizers. Shared by the
/// likelihood and the smoother. `alphas`, when given, receives the scaled
/// forward variables (T x r, row-major).
fn forward_scaled(
    hmm: &Hmm,
    obs: &[usize],
    mut alphas: Option<&mut Vec<f64>>,
) -> Result<Vec<f64>, HmmError> {
    let r = hmm.r;
    let mut scale = Vec::with_capacity(obs.len());
    let mut cur = vec![0.0; r];
    let mut prev = vec![0.0; r];

    for (t, &s) in obs.iter().enumerate() {
        if t == 0 {
            for j in 0..r {
                cur[j] = hmm.nu[j] * hmm.g[j][s];
            }
        } else {
            for j in 0..r {
                let mut acc = 0.0;
                for i in 0..r {
                    acc += prev[i] * hmm.q[i][j];
                }
                cur[j] = acc * hmm.g[j][s];
            }
        }
        let c: f64 = cur.iter().sum();
        if c <= 0.0 || !c.is_finite() {
            return Err(HmmError::ImpossibleObservation { step: t });
        }
        for v in cur.iter_mut() {
            *v /= c;
        }
        scale.push(c);
        if let Some(buf) = alphas.as_deref_mut() {
            buf.extend_from_slice(&cur);
        }
        std::mem::swap(&mut cur, &mut prev);
    }
    Ok(scale)
}

/// Log likelihood of the observations under the model: the sum of the log
/// normalizers of the scaled forward pass.
pub fn log_likelihood(hmm: &Hmm, obs: &ObservationSequence) -> Result<f64, HmmError> {
    assert!(!obs.is_empty(), "observation sequence must be non-empty");
    hmm.check_alphabet(obs)?;
    let scale = forward_scaled(hmm, &obs.obs, None)?;
    Ok(scale.iter().map(|c| c.ln()).sum())
}

/// Scaled forward-backward smoothing. O(T r^2) time, O(T r^2) storage for the
/// pairwise posteriors; numerically safe for T in the millions because every
/// step is renormalized.
pub fn forward_backward(hmm: &Hmm, obs: &ObservationSequence) -> Result<SmoothingCache, HmmError> {
    assert!(!obs.is_empty(), "observation sequence must be non-empty");
    hmm.check_alphabet(obs)?;
    let r = hmm.r;
    let t_len = obs.len();
    let s = &obs.obs;

    let mut alphas = Vec::with_capacity(t_len * r);
    let scale = forward_scaled(hmm, s, Some(&mut alphas))?;
    let log_likelihood = scale.iter().map(|c| c.ln()).sum();

    let mut phi = vec![0.0; t_len * r];
    let mut phi_pair = vec![0.0; (t_len - 1) * r * r];

    // beta_{T-1} = 1; phi_{T-1} = alpha_{T-1}.
    let mut beta_next = vec![1.0; r];
    let mut beta_cur = vec![0.0; r];
    phi[(t_len - 1) * r..].copy_from_slice(&alphas[(t_len - 1) * r..]);

    for t in (0..t_len - 1).rev() {
        let c_next = scale[t + 1];
        let alpha_t = &alphas[t * r..(t + 1) * r];
        let sym = s[t + 1];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..r {
                let w = hmm.q[i][j] * hmm.g[j][sym] * beta_next[j] / c_next;
                phi_pair[t * r * r + i * r + j] = alpha_t[i] * w;
                acc += w;
            }
            beta_cur[i] = acc;
            phi[t * r + i] = alpha_t[i] * acc;
        }
        std::mem::swap(&mut beta_cur, &mut beta_next);
    }

    Ok(SmoothingCache { r, len: t_len, log_likelihood, phi, phi_pair, scale })
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in weights.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    weights.len() - 1
}

/// Samples a hidden state path and observation sequence of the given length.
/// Deterministic for a given seed.
pub fn simulate(hmm: &Hmm, length: usize, seed: u64) -> (Vec<usize>, ObservationSequence) {
    assert!(length >= 1, "simulated sequence must have at least one step");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(length);
    let mut obs = Vec::with_capacity(length);
    let mut state = sample_categorical(&mut rng, &hmm.nu);
    for _ in 0..length {
        states.push(state);
        obs.push(sample_categorical(&mut rng, &hmm.g[state]));
        state = sample_categorical(&mut rng, &hmm.q[state]);
    }
    (states, ObservationSequence::new(hmm.m, obs))
}
