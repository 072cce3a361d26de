//! Baum-Welch parameter estimation.
//!
//! Each iteration smooths the sequence once and re-estimates in closed form
//! from the posteriors:
//!
//! ```text
//! nu_j  = phi_0(j) / sum_l phi_0(l)
//! g_js  = sum_{t} [s_t = s] phi_t(j) / sum_{t} phi_t(j)
//! q_jk  = sum_{t<T-1} phi_pair_t(j,k) / sum_{t<T-1} phi_t(j)
//! ```
//!
//! which is one O(T r (r + m)) pass per iteration. The log likelihood is
//! non-decreasing across iterations; convergence is declared when it moves by
//! less than `tol`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::{forward_backward, log_likelihood, Hmm, HmmError};
use crate::cluster::ObservationSequence;

/// Posterior mass below which a state is considered to have dropped out of
/// the model; its rows are re-seeded uniformly rather than divided by ~0.
const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when the log likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-6, max_iter: 500 }
    }
}

/// How to start the iteration: a fixed model, or seeded random restarts
/// keeping the best final likelihood.
#[derive(Debug, Clone)]
pub enum FitInit {
    Model(Hmm),
    Seed { seed: u64, restarts: usize },
}

impl FitInit {
    /// Five seeded restarts, the customary default.
    pub fn seeded(seed: u64) -> Self {
        FitInit::Seed { seed, restarts: 5 }
    }
}

/// A state whose posterior mass collapsed during iteration `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegenerateEvent {
    pub iteration: usize,
    pub state: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub hmm: Hmm,
    /// Number of re-estimation steps applied.
    pub iterations: usize,
    /// Log likelihood of the parameters entering each step; index 0 is the
    /// initial model. Non-decreasing unless a degenerate state was re-seeded.
    pub trajectory: Vec<f64>,
    pub final_log_likelihood: f64,
    pub degenerate: Vec<DegenerateEvent>,
}

/// Default starting point: uniform nu, a sticky transition matrix
/// (0.9 on the diagonal, the rest spread evenly) reflecting that binned
/// workloads dwell in phases, and emission rows drawn flat-Dirichlet from the
/// seed so restarts explore distinct basins.
pub fn default_init(r: usize, m: usize, seed: u64) -> Hmm {
    assert!(r >= 1 && m >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = vec![1.0 / r as f64; r];
    let q = if r == 1 {
        vec![vec![1.0]]
    } else {
        (0..r)
            .map(|i| (0..r).map(|j| if i == j { 0.9 } else { 0.1 / (r - 1) as f64 }).collect())
            .collect()
    };
    let g = (0..r)
        .map(|_| {
            let mut row: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            row
        })
        .collect();
    Hmm::new(nu, q, g).expect("constructed init is stochastic")
}

fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= sum);
}

/// One re-estimation step. Returns the updated model, the log likelihood of
/// the *input* model, and the states (if any) whose posterior mass collapsed
/// and were re-seeded uniformly.
pub fn baum_welch_step(
    hmm: &Hmm,
    obs: &ObservationSequence,
) -> Result<(Hmm, f64, Vec<usize>), HmmError> {
    let cache = forward_backward(hmm, obs)?;
    let (r, m, t_len) = (hmm.r, hmm.m, obs.len());

    let mut nu = cache.phi(0).to_vec();
    normalize(&mut nu);

    // Accumulate numerators; denominators are their row sums, which keeps the
    // updated rows stochastic to machine precision.
    let mut g_num = vec![vec![0.0; m]; r];
    let mut q_num = vec![vec![0.0; r]; r];
    for t in 0..t_len {
        let phi_t = cache.phi(t);
        let s = obs.obs[t];
        for j in 0..r {
            g_num[j][s] += phi_t[j];
        }
        if t + 1 < t_len {
            let pair = cache.phi_pair(t);
            for j in 0..r {
                for k in 0..r {
                    q_num[j][k] += pair[j * r + k];
                }
            }
        }
    }

    let mut degenerate = Vec::new();
    let mut q = Vec::with_capacity(r);
    let mut g = Vec::with_capacity(r);
    for j in 0..r {
        let mass: f64 = g_num[j].iter().sum();
        if mass < DEGENERATE_MASS {
            degenerate.push(j);
            q.push(vec![1.0 / r as f64; r]);
            g.push(vec![1.0 / m as f64; m]);
            continue;
        }
        let mut g_row = g_num[j].clone();
        normalize(&mut g_row);
        g.push(g_row);
        let q_mass: f64 = q_num[j].iter().sum();
        if q_mass < DEGENERATE_MASS {
            // No transition evidence for this state (e.g. it only appears at
            // the final step); keep its old row rather than divide by ~0.
            q.push(hmm.q[j].clone());
        } else {
            let mut q_row = q_num[j].clone();
            normalize(&mut q_row);
            q.push(q_row);
        }
    }

    let updated = Hmm { r, m, nu, q, g };
    debug_assert!(updated.validate().is_ok());
    Ok((updated, cache.log_likelihood, degenerate))
}

fn run_single(
    mut hmm: Hmm,
    obs: &ObservationSequence,
    opts: &FitOptions,
) -> Result<FitResult, HmmError> {
    let mut trajectory = Vec::new();
    let mut degenerate = Vec::new();
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        let (next, ll, degen) = baum_welch_step(&hmm, obs)?;
        trajectory.push(ll);
        degenerate.extend(degen.into_iter().map(|state| DegenerateEvent { iteration: iter, state }));
        hmm = next;
        iterations = iter + 1;
        if iter > 0 && (ll - trajectory[iter - 1]).abs() < opts.tol {
            break;
        }
    }
    let final_log_likelihood = log_likelihood(&hmm, obs)?;
    Ok(FitResult { hmm, iterations, trajectory, final_log_likelihood, degenerate })
}

/// Fits an r-state model to the sequence. With [`FitInit::Seed`], each restart
/// runs from [`default_init`] with a seed drawn from the given one, and the
/// fit with the best final log likelihood wins.
pub fn baum_welch(
    obs: &ObservationSequence,
    r: usize,
    init: FitInit,
    opts: &FitOptions,
) -> Result<FitResult, HmmError> {
    assert!(!obs.is_empty(), "observation sequence must be non-empty");
    assert!(r >= 1);
    match init {
        FitInit::Model(hmm) => {
            if hmm.r != r {
                return Err(HmmError::DimensionMismatch(format!(
                    "requested {r} states but the initial model has {}",
                    hmm.r
                )));
            }
            hmm.validate()?;
            run_single(hmm, obs, opts)
        }
        FitInit::Seed { seed, restarts } => {
            assert!(restarts >= 1);
            let mut seeder = ChaCha8Rng::seed_from_u64(seed);
            let mut best: Option<FitResult> = None;
            for _ in 0..restarts {
                let init = default_init(r, obs.m, seeder.gen());
                let fit = run_single(init, obs, opts)?;
                if best
                    .as_ref()
                    .map_or(true, |b| fit.final_log_likelihood > b.final_log_likelihood)
                {
                    best = Some(fit);
                }
            }
            Ok(best.expect("at least one restart"))
        }
    }
}

/// One row of a model-order sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub r: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// State pairs that look like one state split in two; a hint that r is
    /// too large.
    pub duplicate_pairs: Vec<(usize, usize)>,
}

/// Detects near-duplicate state pairs: emission rows within L1 distance 0.05
/// of each other whose transition structure either also coincides or
/// oscillates between the two states with high probability.
pub fn near_duplicate_states(hmm: &Hmm) -> Vec<(usize, usize)> {
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let mut pairs = Vec::new();
    for i in 0..hmm.r {
        for j in i + 1..hmm.r {
            if l1(&hmm.g[i], &hmm.g[j]) > 0.05 {
                continue;
            }
            let same_rows = l1(&hmm.q[i], &hmm.q[j]) <= 0.05;
            let oscillating = hmm.q[i][j] >= 0.5 && hmm.q[j][i] >= 0.5;
            if same_rows || oscillating {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Fits every state count in `r_values` and reports the attained likelihoods
/// plus duplicate-state warnings, for choosing the model order by eye.
pub fn sweep_states(
    obs: &ObservationSequence,
    r_values: &[usize],
    seed: u64,
    restarts: usize,
    opts: &FitOptions,
) -> Result<Vec<SweepEntry>, HmmError> {
    let mut entries = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let fit = baum_welch(obs, r, FitInit::Seed { seed, restarts }, opts)?;
        entries.push(SweepEntry {
            r,
            log_likelihood: fit.final_log_likelihood,
            iterations: fit.iterations,
            duplicate_pairs: near_duplicate_states(&fit.hmm),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::hmm::simulate;

    #[test]
    fn one_step_matches_posterior_formulas() {
        // Hand evaluation of the re-estimation formulas from exhaustively
        // enumerated posteriors.
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        for _ in 0..20 {
            let r = rng.gen_range(2..=3);
            let m = rng.gen_range(2..=4);
            let t_len = rng.gen_range(3..=8);
            let hmm = random_hmm(r, m, &mut rng);
            let obs = random_obs(m, t_len, &mut rng);
            let (updated, ll, degen) = baum_welch_step(&hmm, &obs).unwrap();
            assert!(degen.is_empty());
            assert!((ll - enum_likelihood(&hmm, &obs.obs).ln()).abs() < 1e-10);

            let (phi, pair) = enum_posteriors(&hmm, &obs.obs);
            let nu_total: f64 = phi[0].iter().sum();
            for j in 0..r {
                assert!((updated.nu[j] - phi[0][j] / nu_total).abs() < 1e-12);
                let mass: f64 = (0..t_len).map(|t| phi[t][j]).sum();
                for s in 0..m {
                    let num: f64 =
                        (0..t_len).filter(|&t| obs.obs[t] == s).map(|t| phi[t][j]).sum();
                    assert!((updated.g[j][s] - num / mass).abs() < 1e-12);
                }
                let q_mass: f64 = (0..t_len - 1).map(|t| phi[t][j]).sum();
                for k in 0..r {
                    let num: f64 = (0..t_len - 1).map(|t| pair[t][j * r + k]).sum();
                    assert!((updated.q[j][k] - num / q_mass).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_state_fit_recovers_empirical_frequencies() {
        let obs = ObservationSequence::new(3, vec![0, 0, 1, 2, 2, 2, 0, 1, 1, 2]);
        let fit =
            baum_welch(&obs, 1, FitInit::Seed { seed: 1, restarts: 1 }, &FitOptions::default())
                .unwrap();
        assert_eq!(fit.hmm.q, vec![vec![1.0]]);
        assert_eq!(fit.hmm.nu, vec![1.0]);
        for (s, expected) in [(0usize, 0.3), (1, 0.3), (2, 0.4)] {
            assert!((fit.hmm.g[0][s] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_is_monotone_and_rows_stay_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(402);
        for _ in 0..10 {
            let truth = random_hmm(3, 4, &mut rng);
            let (_, obs) = simulate(&truth, 2000, rng.gen());
            let fit = baum_welch(
                &obs,
                3,
                FitInit::Seed { seed: rng.gen(), restarts: 1 },
                &FitOptions { tol: 1e-7, max_iter: 60 },
            )
            .unwrap();
            assert!(fit.degenerate.is_empty());
            for w in fit.trajectory.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "log likelihood fell: {} -> {}", w[0], w[1]);
            }
            for row in fit.hmm.q.iter().chain(fit.hmm.g.iter()) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9);
            }
            assert!(fit.final_log_likelihood >= *fit.trajectory.last().unwrap() - 1e-8);
        }
    }

    #[test]
    fn recovers_a_well_separated_two_state_model() {
        let truth = Hmm::new(
            vec![0.6, 0.4],
            vec![vec![0.95, 0.05], vec![0.10, 0.90]],
            vec![vec![0.85, 0.10, 0.05], vec![0.05, 0.15, 0.80]],
        )
        .unwrap();
        let (_, obs) = simulate(&truth, 100_000, 37);
        let fit =
            baum_welch(&obs, 2, FitInit::Seed { seed: 5, restarts: 2 }, &FitOptions::default())
                .unwrap();

        // Compare up to state relabeling.
        let err_for = |perm: [usize; 2]| {
            let mut worst: f64 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    worst = worst.max((fit.hmm.q[perm[i]][perm[j]] - truth.q[i][j]).abs());
                }
                for s in 0..3 {
                    worst = worst.max((fit.hmm.g[perm[i]][s] - truth.g[i][s]).abs());
                }
            }
            worst
        };
        let best = err_for([0, 1]).min(err_for([1, 0]));
        assert!(best <= 0.02, "recovered parameters off by {best}");
    }

    #[test]
    fn fixed_init_runs_are_reproducible_and_seeds_vary() {
        let mut rng = ChaCha8Rng::seed_from_u64(403);
        let truth = random_hmm(2, 3, &mut rng);
        let (_, obs) = simulate(&truth, 500, 9);
        let opts = FitOptions { tol: 1e-6, max_iter: 30 };
        let a = baum_welch(&obs, 2, FitInit::Seed { seed: 11, restarts: 2 }, &opts).unwrap();
        let b = baum_welch(&obs, 2, FitInit::Seed { seed: 11, restarts: 2 }, &opts).unwrap();
        assert_eq!(a.hmm, b.hmm);
        assert_eq!(a.trajectory, b.trajectory);

        let init_a = default_init(3, 4, 1);
        let init_b = default_init(3, 4, 2);
        assert_ne!(init_a.g, init_b.g);
        assert_eq!(init_a.q[0][0], 0.9);
        assert!((init_a.q[0][1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn restarts_keep_the_best_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let truth = random_hmm(3, 5, &mut rng);
        let (_, obs) = simulate(&truth, 3000, 21);
        let opts = FitOptions { tol: 1e-6, max_iter: 40 };
        let multi = baum_welch(&obs, 3, FitInit::Seed { seed: 77, restarts: 4 }, &opts).unwrap();

        // Re-run the individual restarts by hand; the multi-restart result
        // must equal the max.
        let mut seeder = ChaCha8Rng::seed_from_u64(77);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..4 {
            let init = default_init(3, obs.m, seeder.gen());
            let fit = baum_welch(&obs, 3, FitInit::Model(init), &opts).unwrap();
            best = best.max(fit.final_log_likelihood);
        }
        assert_eq!(multi.final_log_likelihood, best);
    }

    #[test]
    fn permuting_the_init_permutes_the_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(405);
        let truth = random_hmm(3, 4, &mut rng);
        let (_, obs) = simulate(&truth, 1500, 3);
        let init = default_init(3, 4, 600);

        let perm = [2usize, 0, 1];
        let permuted_init = Hmm::new(
            perm.iter().map(|&i| init.nu[i]).collect(),
            perm.iter().map(|&i| perm.iter().map(|&j| init.q[i][j]).collect()).collect(),
            perm.iter().map(|&i| init.g[i].clone()).collect(),
        )
        .unwrap();

        let opts = FitOptions { tol: 1e-8, max_iter: 25 };
        let base = baum_welch(&obs, 3, FitInit::Model(init), &opts).unwrap();
        let permuted = baum_welch(&obs, 3, FitInit::Model(permuted_init), &opts).unwrap();

        assert!((base.final_log_likelihood - permuted.final_log_likelihood).abs() < 1e-9);
        for i in 0..3 {
            for j in 0..3 {
                assert!((permuted.hmm.q[i][j] - base.hmm.q[perm[i]][perm[j]]).abs() < 1e-9);
            }
            for s in 0..4 {
                assert!((permuted.hmm.g[i][s] - base.hmm.g[perm[i]][s]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn duplicate_state_detection() {
        let distinct = Hmm::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        )
        .unwrap();
        assert!(near_duplicate_states(&distinct).is_empty());

        let oscillating = Hmm::new(
            vec![0.5, 0.3, 0.2],
            vec![
                vec![0.05, 0.90, 0.05],
                vec![0.92, 0.05, 0.03],
                vec![0.10, 0.10, 0.80],
            ],
            vec![
                vec![0.50, 0.49, 0.01],
                vec![0.49, 0.50, 0.01],
                vec![0.01, 0.01, 0.98],
            ],
        )
        .unwrap();
        assert_eq!(near_duplicate_states(&oscillating), vec![(0, 1)]);

        let same_rows = Hmm::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.7, 0.3], vec![0.7, 0.3]],
        )
        .unwrap();
        assert_eq!(near_duplicate_states(&same_rows), vec![(0, 1)]);
    }

    #[test]
    fn sweep_reports_increasing_fit_and_warnings() {
        let truth = Hmm::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.2, 0.7]],
        )
        .unwrap();
        let (_, obs) = simulate(&truth, 5000, 8);
        let entries = sweep_states(
            &obs,
            &[1, 2, 3],
            13,
            2,
            &FitOptions { tol: 1e-5, max_iter: 60 },
        )
        .unwrap();
        assert_eq!(entries.len(), 3);
        // More states never fit worse.
        assert!(entries[1].log_likelihood >= entries[0].log_likelihood - 1e-6);
        assert!(entries[2].log_likelihood >= entries[1].log_likelihood - 1.0);
        assert!(entries[0].duplicate_pairs.is_empty());
    }
}
