//! Single-server discrete-event queue fed by a binned trace: every read and
//! write block becomes one job, erases are injected one per N writes, and
//! three priority schemes are supported. Used to compare the queueing
//! behaviour a raw trace induces against traces from a fitted model.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterModel;
use crate::hmm::Hmm;
use crate::stats::{batch_means_ci, ConfidenceBand, StatsError};
use crate::synth::{generate_trace, GenConfig, SynthError};
use crate::trace::BinnedTrace;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error("trace has no bins")]
    EmptyTrace,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Strict FCFS over all classes.
    NoPriority,
    /// Reads overtake queued writes/erases but never interrupt one in
    /// service.
    NonPreemptiveRead,
    /// Reads additionally suspend a write/erase in service; the preempted
    /// job resumes later with no lost work.
    PreemptiveRead,
}

pub const ALL_SCHEMES: [Scheme; 3] =
    [Scheme::NoPriority, Scheme::NonPreemptiveRead, Scheme::PreemptiveRead];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSpread {
    /// All of a bin's blocks arrive at the bin's left edge, reads first.
    BinStart,
    /// Each block gets an independent uniform offset inside its bin.
    UniformInBin,
}

/// Per-class service demand in microseconds per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceTimes {
    pub read_us: f64,
    pub write_us: f64,
    pub erase_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSimConfig {
    pub service: ServiceTimes,
    pub scheme: Scheme,
    /// One erase job is injected after every this-many write blocks
    /// (deterministic counter). Must be at least 1.
    pub erase_per_writes: u64,
    pub arrival_spread: ArrivalSpread,
    pub seed: u64,
    /// Backlog size beyond which an overloaded run is flagged unstable.
    pub queue_cap: usize,
}

impl QueueSimConfig {
    pub fn new(service: ServiceTimes, scheme: Scheme) -> Self {
        QueueSimConfig {
            service,
            scheme,
            erase_per_writes: 64,
            arrival_spread: ArrivalSpread::BinStart,
            seed: 0,
            queue_cap: 1_000_000,
        }
    }

    fn validate(&self) -> Result<(), QsimError> {
        for (name, v) in [
            ("read", self.service.read_us),
            ("write", self.service.write_us),
            ("erase", self.service.erase_us),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(QsimError::InvalidParameter(format!("{name} service time {v} us")));
            }
        }
        if self.erase_per_writes == 0 {
            return Err(QsimError::InvalidParameter("erase_per_writes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub jobs: usize,
    pub mean_queueing_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSimReport {
    pub scheme: Scheme,
    pub read: ClassStats,
    pub write: ClassStats,
    pub erase: ClassStats,
    /// Total service demand divided by the trace span.
    pub offered_load: f64,
    /// Fraction of the drain horizon the server spent busy.
    pub utilization: f64,
    pub busy_us: f64,
    pub horizon_us: f64,
    pub max_backlog: usize,
    pub unstable: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OpClass {
    Read,
    Write,
    Erase,
}

struct Job {
    class: OpClass,
    arrival: f64,
    seq: usize,
    service: f64,
}

fn build_jobs(binned: &BinnedTrace, cfg: &QueueSimConfig) -> Vec<Job> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    let width = binned.bin_width_us as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset = |rng: &mut rand_chacha::ChaCha8Rng| match cfg.arrival_spread {
        ArrivalSpread::BinStart => 0.0,
        ArrivalSpread::UniformInBin => rng.gen::<f64>() * width,
    };

    let mut jobs = Vec::new();
    let mut seq = 0usize;
    let mut writes_seen = 0u64;
    for (t, bin) in binned.bins.iter().enumerate() {
        let start = t as f64 * width;
        for _ in 0..bin.reads {
            jobs.push(Job {
                class: OpClass::Read,
                arrival: start + offset(&mut rng),
                seq,
                service: cfg.service.read_us,
            });
            seq += 1;
        }
        for _ in 0..bin.writes {
            let arrival = start + offset(&mut rng);
            jobs.push(Job { class: OpClass::Write, arrival, seq, service: cfg.service.write_us });
            seq += 1;
            writes_seen += 1;
            // The erase shares its trigger's arrival instant and directly
            // follows it in submission order.
            if writes_seen % cfg.erase_per_writes == 0 {
                jobs.push(Job {
                    class: OpClass::Erase,
                    arrival,
                    seq,
                    service: cfg.service.erase_us,
                });
                seq += 1;
            }
        }
    }
    jobs.sort_by(|a, b| a.arrival.partial_cmp(&b.arrival).unwrap().then(a.seq.cmp(&b.seq)));
    jobs
}

/// Runs the trace through the queue and reports per-class mean queueing
/// times (first service start minus arrival). The run always drains: an
/// overload is reported via `offered_load`/`unstable`, not an error.
pub fn simulate_queue(
    binned: &BinnedTrace,
    cfg: &QueueSimConfig,
) -> Result<QueueSimReport, QsimError> {
    cfg.validate()?;
    if binned.is_empty() {
        return Err(QsimError::EmptyTrace);
    }

    let jobs = build_jobs(binned, cfg);
    let mut remaining: Vec<f64> = jobs.iter().map(|j| j.service).collect();
    let mut first_start: Vec<Option<f64>> = vec![None; jobs.len()];

    let mut reads: VecDeque<usize> = VecDeque::new();
    let mut others: VecDeque<usize> = VecDeque::new();
    let mut in_service: Option<usize> = None;
    let mut next = 0usize;
    let mut clock = 0.0f64;
    let mut busy = 0.0f64;
    let mut max_backlog = 0usize;

    loop {
        // Admit everything that has arrived by now, before any service
        // decision, so same-instant arrivals compete as a batch.
        while next < jobs.len() && jobs[next].arrival <= clock {
            match jobs[next].class {
                OpClass::Read => reads.push_back(next),
                _ => others.push_back(next),
            }
            next += 1;
        }
        max_backlog = max_backlog.max(reads.len() + others.len());

        if cfg.scheme == Scheme::PreemptiveRead && !reads.is_empty() {
            if let Some(idx) = in_service {
                if jobs[idx].class != OpClass::Read {
                    // Preempt-resume: the interrupted job returns to the
                    // head of its queue with only its unserved remainder.
                    others.push_front(idx);
                    in_service = None;
                }
            }
        }

        if in_service.is_none() {
            in_service = match cfg.scheme {
                Scheme::NoPriority => match (reads.front(), others.front()) {
                    (Some(&a), Some(&b)) => {
                        let first_a = (jobs[a].arrival, jobs[a].seq) <= (jobs[b].arrival, jobs[b].seq);
                        if first_a {
                            reads.pop_front()
                        } else {
                            others.pop_front()
                        }
                    }
                    (Some(_), None) => reads.pop_front(),
                    (None, Some(_)) => others.pop_front(),
                    (None, None) => None,
                },
                _ => reads.pop_front().or_else(|| others.pop_front()),
            };
            if let Some(idx) = in_service {
                first_start[idx].get_or_insert(clock);
            }
        }

        let t_arrival = jobs.get(next).map(|j| j.arrival).unwrap_or(f64::INFINITY);
        let t_done = in_service.map(|idx| clock + remaining[idx]).unwrap_or(f64::INFINITY);
        if t_arrival.is_infinite() && t_done.is_infinite() {
            break;
        }
        if t_done <= t_arrival {
            busy += t_done - clock;
            if let Some(idx) = in_service.take() {
                remaining[idx] = 0.0;
            }
            clock = t_done;
        } else {
            if let Some(idx) = in_service {
                busy += t_arrival - clock;
                remaining[idx] -= t_arrival - clock;
            }
            clock = t_arrival;
        }
    }

    let span = binned.len() as f64 * binned.bin_width_us as f64;
    let total_service: f64 = jobs.iter().map(|j| j.service).sum();
    let horizon = clock.max(span);
    let offered_load = total_service / span;

    let mut count = [0usize; 3];
    let mut wait_sum = [0.0f64; 3];
    for (i, job) in jobs.iter().enumerate() {
        let c = job.class as usize;
        count[c] += 1;
        wait_sum[c] += first_start[i].expect("every job is eventually served") - job.arrival;
    }
    let class = |c: OpClass| {
        let c = c as usize;
        ClassStats {
            jobs: count[c],
            mean_queueing_ms: if count[c] > 0 {
                Some(wait_sum[c] / count[c] as f64 / 1000.0)
            } else {
                None
            },
        }
    };

    let unstable = offered_load > 1.0 && max_backlog > cfg.queue_cap;
    if unstable {
        log::warn!(
            "offered load {offered_load:.3} > 1 and backlog reached {max_backlog} (cap {})",
            cfg.queue_cap
        );
    }

    Ok(QueueSimReport {
        scheme: cfg.scheme,
        read: class(OpClass::Read),
        write: class(OpClass::Write),
        erase: class(OpClass::Erase),
        offered_load,
        utilization: busy / horizon,
        busy_us: busy,
        horizon_us: horizon,
        max_backlog,
        unstable,
    })
}

/// One class's raw-versus-model comparison under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub class: String,
    pub raw_ms: Option<f64>,
    pub hmm_mean_ms: Option<f64>,
    /// Per-replicate means; replicates where the class had no jobs are
    /// omitted.
    pub hmm_values_ms: Vec<f64>,
    pub band: Option<ConfidenceBand>,
    pub inside: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub scheme: Scheme,
    pub classes: Vec<ClassComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueComparison {
    pub replicates: usize,
    pub level: f64,
    pub schemes: Vec<SchemeComparison>,
}

/// Simulates the raw trace and `replicates` model-generated traces under all
/// three schemes and reports each raw per-class mean against the replicate
/// confidence band. `cfg.scheme` is ignored; `cfg.seed` drives both trace
/// generation and any in-bin arrival jitter.
pub fn compare_raw_vs_hmm(
    raw: &BinnedTrace,
    hmm: &Hmm,
    clusters: &ClusterModel,
    cfg: &QueueSimConfig,
    replicates: usize,
    level: f64,
) -> Result<QueueComparison, QsimError> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    cfg.validate()?;
    if replicates < 2 {
        return Err(StatsError::TooFewReplicates(replicates).into());
    }

    let mut seeder = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut synthetic = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let gen_cfg = GenConfig::new(raw.len(), seeder.gen(), raw.bin_width_us);
        synthetic.push((generate_trace(hmm, clusters, &gen_cfg)?, seeder.gen::<u64>()));
    }

    let mut schemes = Vec::with_capacity(ALL_SCHEMES.len());
    for scheme in ALL_SCHEMES {
        let mut scheme_cfg = cfg.clone();
        scheme_cfg.scheme = scheme;
        let raw_report = simulate_queue(raw, &scheme_cfg)?;

        let mut replicate_reports = Vec::with_capacity(replicates);
        for (trace, sim_seed) in &synthetic {
            let mut rep_cfg = scheme_cfg.clone();
            rep_cfg.seed = *sim_seed;
            replicate_reports.push(simulate_queue(trace, &rep_cfg)?);
        }

        type ClassPick = fn(&QueueSimReport) -> &ClassStats;
        let mut classes = Vec::with_capacity(3);
        let picks: [(&str, ClassPick); 3] = [
            ("read", |r| &r.read),
            ("write", |r| &r.write),
            ("erase", |r| &r.erase),
        ];
        for (name, pick) in picks {
            let raw_ms = pick(&raw_report).mean_queueing_ms;
            let values: Vec<f64> =
                replicate_reports.iter().filter_map(|r| pick(r).mean_queueing_ms).collect();
            let band = if values.len() >= 2 { Some(batch_means_ci(&values, level)?) } else { None };
            let hmm_mean_ms = if values.is_empty() {
                None
            } else {
                Some(values.iter().sum::<f64>() / values.len() as f64)
            };
            let inside = match (&band, raw_ms) {
                (Some(b), Some(v)) => Some(b.contains(v)),
                _ => None,
            };
            classes.push(ClassComparison {
                class: name.to_string(),
                raw_ms,
                hmm_mean_ms,
                hmm_values_ms: values,
                band,
                inside,
            });
        }
        schemes.push(SchemeComparison { scheme, classes });
    }

    Ok(QueueComparison { replicates, level, schemes })
}
