//! Benchmark harness.
//!
//! Each repetition starts a fresh runtime with `carriers` carrier threads and
//! `tasks` worker tasks. Workers meet at a barrier, then loop until their time
//! is up:
//!
//! ```text
//! t0 = now; LOCK; t1 = now; record t1 - t0
//! critical section
//! UNLOCK
//! parallel work
//! ```
//!
//! and meet at a second barrier. Throughput is the sum of the per-task
//! acquisition counts divided by the time between the two barrier releases.
//! Latency quantiles are nearest-rank over every recorded `t1 - t0` sample.
//! Timestamps come from [`std::time::Instant`] (a monotonic clock,
//! `CLOCK_MONOTONIC` on Linux); the cost of reading it is not subtracted.
//!
//! A repetition that has not finished after five times its nominal duration
//! is cancelled and reported with [`RunStatus::Deadlocked`] instead of
//! aborting the run.

mod csv_io;
mod quantile;
pub mod scenario;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{read_csv, write_csv, CSV_HEADER};
pub use quantile::{compute_quantiles, median, nearest_rank, QuantileError};
pub use scenario::{Scenario, SharedData};

use crate::backoff::{BackoffConfig, StrategyMask, WaitSpec};
use crate::locks::{AnyLock, CoopLock, LockKind, LockNode, QueueSelection};
use crate::runtime::{self, PoolPolicy, RuntimeConfig, RuntimeError, DEFAULT_STACK_SIZE};
use crate::sync::{BarrierRole, CoopBarrier};
use scenario::LiveWork;

/// Grace period, as a multiple of the nominal duration, before a repetition
/// is declared deadlocked.
pub const DEADLOCK_GRACE_FACTOR: u32 = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub lock: LockKind,
    pub strategy: StrategyMask,
    pub scenario: Scenario,
    pub carriers: usize,
    pub tasks: usize,
    pub duration: Duration,
    pub warmup: Duration,
    pub repetitions: u32,
    pub backoff: BackoffConfig,
    pub selection: QueueSelection,
    pub pool_policy: PoolPolicy,
    pub stack_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lock: LockKind::Mcs,
            strategy: StrategyMask::SYS,
            scenario: Scenario::CacheLineIncrement,
            carriers: 1,
            tasks: 1,
            duration: Duration::from_secs(2),
            warmup: Duration::from_secs(1),
            repetitions: 5,
            backoff: BackoffConfig::default(),
            selection: QueueSelection::CarrierModN,
            pool_policy: PoolPolicy::SingleGlobalFifo,
            stack_size: DEFAULT_STACK_SIZE,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.tasks == 0 {
            return Err(BenchError::Config("tasks must be at least 1".into()));
        }
        if self.duration.is_zero() {
            return Err(BenchError::Config("duration must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        self.backoff.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.runtime_config(0).validate()?;
        Ok(())
    }

    fn runtime_config(&self, rep: u32) -> RuntimeConfig {
        RuntimeConfig {
            carriers: self.carriers,
            pool_policy: self.pool_policy,
            stack_size: self.stack_size,
            seed: self.seed ^ u64::from(rep).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        }
    }

    pub fn wait_spec(&self) -> WaitSpec {
        WaitSpec::new(self.strategy, self.backoff)
    }

    pub fn grace(&self, duration: Duration) -> Duration {
        duration * DEADLOCK_GRACE_FACTOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Deadlocked,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Deadlocked => "deadlocked",
        })
    }
}

/// One repetition, in CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub lock: String,
    pub strategy: String,
    pub scenario: String,
    pub carriers: usize,
    pub tasks: usize,
    pub queues: usize,
    pub rep: u32,
    pub duration_s: f64,
    pub acquisitions: u64,
    pub throughput_per_s: f64,
    pub lat_ns_q50: u64,
    pub lat_ns_q95: u64,
    pub lat_ns_q99: u64,
    pub status: RunStatus,
}

/// Everything a repetition produced, including what the record drops.
#[derive(Debug, Clone)]
pub struct RepetitionOutcome {
    pub record: BenchmarkRecord,
    /// Final values of the eight shared fields (cache-line workload).
    pub fields: Option<[u64; 8]>,
    pub per_task_acquisitions: Vec<u64>,
    pub latency_samples: usize,
}

struct Window {
    start: OnceLock<Instant>,
    end: OnceLock<Instant>,
}

struct WorkerResult {
    acquisitions: u64,
    samples: Vec<u64>,
}

fn worker(
    lock: &AnyLock,
    data: &SharedData,
    barrier: &CoopBarrier,
    window: &Window,
    scenario: Scenario,
    duration: Duration,
) -> WorkerResult {
    let mut samples = Vec::with_capacity(1 << 14);
    let mut acquisitions = 0u64;
    let mut node = LockNode::new();
    let work = LiveWork;

    if barrier.wait() == BarrierRole::Leader {
        let _ = window.start.set(Instant::now());
    }
    let stop = Instant::now() + duration;
    while Instant::now() < stop {
        let before = Instant::now();
        let guard = lock.acquire(&mut node);
        let after = Instant::now();
        samples.push((after - before).as_nanos() as u64);
        acquisitions += 1;
        scenario.critical_section(data, &work);
        drop(guard);
        scenario.parallel_work(&work);
    }
    if barrier.wait() == BarrierRole::Leader {
        let _ = window.end.set(Instant::now());
    }
    WorkerResult { acquisitions, samples }
}

impl BenchmarkRecord {
    fn skeleton(config: &BenchConfig, rep: u32) -> Self {
        Self {
            lock: config.lock.to_string(),
            strategy: config.strategy.code(),
            scenario: config.scenario.to_string(),
            carriers: config.carriers,
            tasks: config.tasks,
            queues: config.lock.queues(),
            rep,
            duration_s: 0.0,
            acquisitions: 0,
            throughput_per_s: 0.0,
            lat_ns_q50: 0,
            lat_ns_q95: 0,
            lat_ns_q99: 0,
            status: RunStatus::Ok,
        }
    }
}

/// Runs one timed repetition of `duration` on a fresh runtime.
pub fn run_repetition(config: &BenchConfig, rep: u32, duration: Duration) -> Result<RepetitionOutcome, BenchError> {
    config.validate()?;
    let tasks = config.tasks;
    let scenario = config.scenario;
    let lock = Arc::new(AnyLock::new(config.lock, config.wait_spec(), config.selection));
    let data = Arc::new(SharedData::new());
    let barrier = Arc::new(CoopBarrier::new(tasks));
    let window = Arc::new(Window {
        start: OnceLock::new(),
        end: OnceLock::new(),
    });

    let root = {
        let (lock, data, window) = (lock.clone(), data.clone(), window.clone());
        move || {
            let workers: Vec<_> = (0..tasks)
                .map(|_| {
                    let (lock, data, barrier, window) = (lock.clone(), data.clone(), barrier.clone(), window.clone());
                    runtime::spawn(move || worker(&lock, &data, &barrier, &window, scenario, duration))
                })
                .collect::<Result<_, _>>()?;
            workers.into_iter().map(|w| w.join()).collect::<Result<Vec<_>, _>>()
        }
    };

    let mut record = BenchmarkRecord::skeleton(config, rep);
    let outcome = runtime::start_with_timeout(config.runtime_config(rep), config.grace(duration), root);
    let results = match outcome {
        Ok(Ok(results)) => results,
        Ok(Err(e)) => return Err(e.into()),
        Err(RuntimeError::Deadlocked(_)) => {
            record.status = RunStatus::Deadlocked;
            return Ok(RepetitionOutcome {
                record,
                fields: None,
                per_task_acquisitions: Vec::new(),
                latency_samples: 0,
            });
        }
        Err(e) => return Err(e.into()),
    };

    let per_task: Vec<u64> = results.iter().map(|r| r.acquisitions).collect();
    let total: u64 = per_task.iter().sum();
    let samples: Vec<u64> = results.into_iter().flat_map(|r| r.samples).collect();
    let measured = match (window.start.get(), window.end.get()) {
        (Some(s), Some(e)) => e.saturating_duration_since(*s),
        _ => duration,
    };
    record.duration_s = measured.as_secs_f64();
    record.acquisitions = total;
    record.throughput_per_s = if record.duration_s > 0.0 {
        total as f64 / record.duration_s
    } else {
        0.0
    };
    if !samples.is_empty() {
        let q = compute_quantiles(&samples, &[0.5, 0.95, 0.99]).expect("non-empty samples");
        record.lat_ns_q50 = q[0];
        record.lat_ns_q95 = q[1];
        record.lat_ns_q99 = q[2];
    }
    Ok(RepetitionOutcome {
        record,
        fields: (scenario == Scenario::CacheLineIncrement).then(|| data.snapshot()),
        per_task_acquisitions: per_task,
        latency_samples: samples.len(),
    })
}

/// Warm-up (discarded) followed by `repetitions` recorded runs.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchmarkRecord>, BenchError> {
    config.validate()?;
    if !config.warmup.is_zero() {
        run_repetition(config, u32::MAX, config.warmup)?;
    }
    (0..config.repetitions)
        .map(|rep| run_repetition(config, rep, config.duration).map(|o| o.record))
        .collect()
}

/// Median across repetitions of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub lock: String,
    pub strategy: String,
    pub scenario: String,
    pub carriers: usize,
    pub tasks: usize,
    pub queues: usize,
    pub repetitions: usize,
    pub deadlocked: usize,
    pub median_throughput_per_s: Option<f64>,
    pub median_lat_ns_q50: Option<u64>,
    pub median_lat_ns_q95: Option<u64>,
    pub median_lat_ns_q99: Option<u64>,
}

/// Groups records by configuration and takes nearest-rank medians over the
/// repetitions that completed.
pub fn summarize(records: &[BenchmarkRecord]) -> Vec<Summary> {
    type Key = (String, String, String, usize, usize, usize);
    let mut groups: BTreeMap<Key, Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.lock.clone(),
                r.strategy.clone(),
                r.scenario.clone(),
                r.carriers,
                r.tasks,
                r.queues,
            ))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((lock, strategy, scenario, carriers, tasks, queues), group)| {
            let ok: Vec<_> = group.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let med = |f: &dyn Fn(&BenchmarkRecord) -> u64| {
                let values: Vec<u64> = ok.iter().map(|r| f(r)).collect();
                median(&values).ok()
            };
            // Throughput is a float; rank by value and pick the nearest-rank median.
            let median_throughput_per_s = if ok.is_empty() {
                None
            } else {
                let mut t: Vec<f64> = ok.iter().map(|r| r.throughput_per_s).collect();
                t.sort_by(f64::total_cmp);
                Some(t[nearest_rank(0.5, t.len()) - 1])
            };
            Summary {
                lock,
                strategy,
                scenario,
                carriers,
                tasks,
                queues,
                repetitions: group.len(),
                deadlocked: group.len() - ok.len(),
                median_throughput_per_s,
                median_lat_ns_q50: med(&|r| r.lat_ns_q50),
                median_lat_ns_q95: med(&|r| r.lat_ns_q95),
                median_lat_ns_q99: med(&|r| r.lat_ns_q99),
            }
        })
        .collect()
}

/// Task counts `1, 2, 4, ...` up to `16 × carriers`.
pub fn default_task_grid(carriers: usize) -> Vec<usize> {
    let max = 16 * carriers.max(1);
    std::iter::successors(Some(1usize), |t| Some(t * 2))
        .take_while(|&t| t <= max)
        .collect()
}

/// Grid of benchmark runs sharing everything but lock, strategy and task count.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: BenchConfig,
    pub locks: Vec<LockKind>,
    pub strategies: Vec<StrategyMask>,
    pub task_counts: Vec<usize>,
}

impl SweepConfig {
    pub fn configs(&self) -> Vec<BenchConfig> {
        let mut out = Vec::new();
        for &lock in &self.locks {
            // The baseline ignores the strategy; run it once per task count.
            let strategies: &[StrategyMask] = if lock.uses_strategy() {
                &self.strategies
            } else {
                &self.strategies[..self.strategies.len().min(1)]
            };
            for &strategy in strategies {
                for &tasks in &self.task_counts {
                    out.push(BenchConfig {
                        lock,
                        strategy,
                        tasks,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

pub fn run_sweep(
    sweep: &SweepConfig,
    mut on_record: impl FnMut(&BenchmarkRecord),
) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let mut all = Vec::new();
    for config in sweep.configs() {
        for record in run_benchmark(&config)? {
            on_record(&record);
            all.push(record);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_grid() {
        assert_eq!(default_task_grid(1), vec![1, 2, 4, 8, 16]);
        assert_eq!(default_task_grid(4), vec![1, 2, 4, 8, 16, 32, 64]);
    }

    #[test]
    fn config_validation() {
        let ok = BenchConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            BenchConfig { tasks: 0, ..ok.clone() },
            BenchConfig {
                carriers: 0,
                ..ok.clone()
            },
            BenchConfig {
                duration: Duration::ZERO,
                ..ok.clone()
            },
            BenchConfig {
                repetitions: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn rec(tasks: usize, rep: u32, thr: f64, q99: u64, status: RunStatus) -> BenchmarkRecord {
        BenchmarkRecord {
            lock: "MCS".into(),
            strategy: "SYS".into(),
            scenario: "cache".into(),
            carriers: 1,
            tasks,
            queues: 1,
            rep,
            duration_s: 1.0,
            acquisitions: thr as u64,
            throughput_per_s: thr,
            lat_ns_q50: q99 / 2,
            lat_ns_q95: q99,
            lat_ns_q99: q99,
            status,
        }
    }

    #[test]
    fn summary_takes_medians_of_completed_runs() {
        let records = vec![
            rec(2, 0, 10.0, 300, RunStatus::Ok),
            rec(2, 1, 30.0, 100, RunStatus::Ok),
            rec(2, 2, 20.0, 200, RunStatus::Ok),
            rec(2, 3, 0.0, 0, RunStatus::Deadlocked),
            rec(4, 0, 5.0, 50, RunStatus::Deadlocked),
        ];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tasks, 2);
        assert_eq!(s[0].median_throughput_per_s, Some(20.0));
        assert_eq!(s[0].median_lat_ns_q99, Some(200));
        assert_eq!(s[0].deadlocked, 1);
        assert_eq!(s[1].median_throughput_per_s, None);
        assert_eq!(s[1].deadlocked, 1);
    }
}
