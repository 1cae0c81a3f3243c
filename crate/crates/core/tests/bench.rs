use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lwlock::backoff::StrategyMask;
use lwlock::bench::scenario::{
    cs_parallelizable, parallel_cache_line_scenario, CountingWork, PARALLEL_CS_NOOPS, PARALLEL_CS_TASKS,
};
use lwlock::bench::{
    read_csv, run_benchmark, run_repetition, summarize, write_csv, BenchConfig, RunStatus, Scenario, CSV_HEADER,
};
use lwlock::locks::LockKind;
use lwlock::runtime::{self, RuntimeConfig};

fn quick(lock: LockKind, strategy: StrategyMask, scenario: Scenario, carriers: usize, tasks: usize) -> BenchConfig {
    BenchConfig {
        lock,
        strategy,
        scenario,
        carriers,
        tasks,
        duration: Duration::from_millis(200),
        warmup: Duration::ZERO,
        repetitions: 1,
        ..BenchConfig::default()
    }
}

#[test]
fn single_task_sanity_floor() {
    let config = quick(LockKind::Mcs, StrategyMask::SYS, Scenario::CacheLineIncrement, 1, 1);
    let out = run_repetition(&config, 0, config.duration).unwrap();
    let r = &out.record;
    assert_eq!(r.status, RunStatus::Ok);
    assert!(r.throughput_per_s > 0.0);
    assert!(r.lat_ns_q50 <= r.lat_ns_q95 && r.lat_ns_q95 <= r.lat_ns_q99);
}

#[test]
fn every_shared_field_counts_every_acquisition() {
    for lock in [
        LockKind::Ttas,
        LockKind::Mcs,
        LockKind::Cohort { queues: 2 },
        LockKind::Baseline,
    ] {
        let config = quick(lock, StrategyMask::SYS, Scenario::CacheLineIncrement, 2, 8);
        let out = run_repetition(&config, 0, config.duration).unwrap();
        let total = out.record.acquisitions;
        assert!(total > 0);
        assert_eq!(out.fields.unwrap(), [total; 8], "{lock}");
        assert_eq!(out.latency_samples as u64, total);
        assert_eq!(out.per_task_acquisitions.iter().sum::<u64>(), total);
        assert_eq!(out.per_task_acquisitions.len(), 8);
    }
}

#[test]
fn spinning_only_parallel_run_is_reported_as_deadlocked() {
    let config = quick(LockKind::Mcs, StrategyMask::S__, Scenario::Parallelizable, 1, 2);
    let out = run_repetition(&config, 0, config.duration).unwrap();
    assert_eq!(out.record.status, RunStatus::Deadlocked);
    assert_eq!(out.record.acquisitions, 0);
}

#[test]
fn parallel_run_completes_on_one_carrier() {
    let config = quick(LockKind::Mcs, StrategyMask::SYS, Scenario::Parallelizable, 1, 4);
    let out = run_repetition(&config, 0, config.duration).unwrap();
    assert_eq!(out.record.status, RunStatus::Ok);
    assert!(out.record.acquisitions > 0);
    assert!(out.fields.is_none());
}

#[test]
fn parallel_critical_section_spawns_twelve_helpers() {
    let (delta, noops) = runtime::start(RuntimeConfig::with_carriers(2), || {
        let work = CountingWork::new();
        let before = runtime::stats().unwrap().spawned;
        cs_parallelizable(&work);
        (runtime::stats().unwrap().spawned - before, work.noop_count())
    })
    .unwrap();
    assert_eq!(delta, u64::from(PARALLEL_CS_TASKS));
    assert_eq!(noops, u64::from(PARALLEL_CS_TASKS * PARALLEL_CS_NOOPS));
    assert_eq!(noops, 120_000);
}

/// Co-task progress observed while one task runs the cache-line parallel
/// phase on a single carrier.
fn co_task_progress(work: CountingWork) -> u64 {
    runtime::start(RuntimeConfig::with_carriers(1), move || {
        let progress = Arc::new(AtomicU64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (p, s) = (progress.clone(), stop.clone());
        let co = runtime::spawn(move || {
            while !s.load(Ordering::Relaxed) {
                p.fetch_add(1, Ordering::Relaxed);
                runtime::yield_now();
            }
        })
        .unwrap();
        runtime::yield_now();
        let before = progress.load(Ordering::Relaxed);
        parallel_cache_line_scenario(&work);
        let seen = progress.load(Ordering::Relaxed) - before;
        stop.store(true, Ordering::Relaxed);
        co.join().unwrap();
        seen
    })
    .unwrap()
}

#[test]
fn removing_yields_starves_the_co_task() {
    assert!(co_task_progress(CountingWork::new()) >= 100);
    let silent = CountingWork::without_yields();
    assert_eq!(co_task_progress(silent.clone()), 0);
    assert_eq!(silent.yield_count(), 100);
}

#[test]
fn csv_holds_header_and_one_row_per_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let mut config = quick(LockKind::Ttas, StrategyMask::SY_, Scenario::CacheLineIncrement, 1, 2);
    config.duration = Duration::from_millis(50);
    let records = run_benchmark(&config).unwrap();
    write_csv(&path, &records, false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert!(lines[1].starts_with("TTAS,SY*,cache,1,2,"));

    write_csv(&path, &records, true).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.matches("lock,strategy").count(), 1);

    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], records[0]);

    let meta = std::fs::read_to_string(path.with_extension("csv.meta")).unwrap();
    assert!(meta.contains("clock"));
}

#[test]
fn warmup_is_not_recorded() {
    let mut config = quick(LockKind::Mcs, StrategyMask::SYS, Scenario::CacheLineIncrement, 1, 2);
    config.duration = Duration::from_millis(30);
    config.warmup = Duration::from_millis(30);
    config.repetitions = 3;
    let records = run_benchmark(&config).unwrap();
    assert_eq!(records.iter().map(|r| r.rep).collect::<Vec<_>>(), [0, 1, 2]);
    let summary = summarize(&records);
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].deadlocked, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut config = quick(LockKind::Mcs, StrategyMask::SYS, Scenario::CacheLineIncrement, 1, 0);
    assert!(run_repetition(&config, 0, config.duration).is_err());
    config.tasks = 1;
    config.carriers = 0;
    assert!(run_benchmark(&config).is_err());
}
