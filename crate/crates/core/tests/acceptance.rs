//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! gating criterion fails. The latency trend line is informational only.

use std::io::Write;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use lwlock::backoff::{StrategyMask, WaitAction, WaitSpec};
use lwlock::bench::{compute_quantiles, median, run_repetition, BenchConfig, RunStatus, Scenario};
use lwlock::locks::{CoopLock, LockKind, LockNode, McsLock};
use lwlock::runtime::{self, PoolPolicy, RuntimeConfig};
use lwlock::verify::{
    self, applicable_strategies, check_handshake_interleavings, check_handshake_stress, check_mutual_exclusion,
    enumerate_handshake, HandshakeOutcome, MATRIX_LOCKS,
};

const CARRIERS: [usize; 3] = [1, 2, 4];
const MUTEX_TASKS: usize = 32;
const MUTEX_ITERATIONS: u64 = 10_000;
const MUTEX_CELL_LIMIT: Duration = Duration::from_secs(120);
const DEADLOCK_DURATION: Duration = Duration::from_millis(300);
const HANDOFFS: u64 = 10_000;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Info(String),
}

fn line(name: &str, outcome: &Outcome) {
    let (tag, detail) = match outcome {
        Outcome::Pass(d) => ("PASS", d),
        Outcome::Fail(d) => ("FAIL", d),
        Outcome::Info(d) => ("INFO", d),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag:<5} {name}: {detail}");
    let _ = out.flush();
}

fn note(msg: impl AsRef<str>) {
    let _ = writeln!(std::io::stderr(), "    {}", msg.as_ref());
}

fn verdict(failures: &[String], pass: String) -> Outcome {
    if failures.is_empty() {
        Outcome::Pass(pass)
    } else {
        Outcome::Fail(failures.join("; "))
    }
}

fn mutual_exclusion() -> Outcome {
    let mut failures = Vec::new();
    let mut cells = 0;
    let mut slowest = Duration::ZERO;
    for lock in MATRIX_LOCKS {
        let strategies: &[StrategyMask] = if lock.uses_strategy() {
            &[StrategyMask::SY_, StrategyMask::SYS]
        } else {
            &[StrategyMask::SYS]
        };
        for &strategy in strategies {
            for carriers in CARRIERS {
                let t = Instant::now();
                let report = check_mutual_exclusion(lock, strategy, carriers, MUTEX_TASKS, MUTEX_ITERATIONS);
                let took = t.elapsed();
                slowest = slowest.max(took);
                cells += 1;
                note(format!("{report} [{took:.2?}]"));
                if !report.passed() {
                    failures.push(report.to_string());
                } else if took > MUTEX_CELL_LIMIT {
                    failures.push(format!("{} took {took:?}", report.name));
                }
            }
        }
    }
    verdict(
        &failures,
        format!("{cells} cells, counter exact, slowest cell {slowest:.2?}"),
    )
}

fn parallel_run(lock: LockKind, strategy: StrategyMask, carriers: usize, tasks: usize) -> RunStatus {
    let config = BenchConfig {
        lock,
        strategy,
        scenario: Scenario::Parallelizable,
        carriers,
        tasks,
        duration: DEADLOCK_DURATION,
        warmup: Duration::ZERO,
        repetitions: 1,
        ..BenchConfig::default()
    };
    match run_repetition(&config, 0, DEADLOCK_DURATION) {
        Ok(out) => out.record.status,
        Err(e) => panic!("{lock} {strategy} carriers={carriers} tasks={tasks}: {e}"),
    }
}

fn deadlock_freedom() -> Outcome {
    let mut failures = Vec::new();
    let mut cells = 0;
    for lock in MATRIX_LOCKS {
        for strategy in applicable_strategies(lock) {
            for carriers in 1..=4 {
                let mut grid = vec![1, 2 * carriers, 8 * carriers];
                grid.dedup();
                for tasks in grid {
                    let status = parallel_run(lock, strategy, carriers, tasks);
                    cells += 1;
                    if status != RunStatus::Ok {
                        failures.push(format!("{lock} {strategy} carriers={carriers} tasks={tasks} {status}"));
                    }
                }
            }
        }
    }
    let control = parallel_run(LockKind::Mcs, StrategyMask::S__, 1, 2);
    note(format!("negative control MCS S** carriers=1 tasks=2: {control}"));
    if control != RunStatus::Deadlocked {
        failures.push(format!(
            "negative control MCS S** carriers=1 tasks=2 finished ({control})"
        ));
    }
    verdict(
        &failures,
        format!(
            "{cells} runs finished within {}x duration; S** control hung as expected",
            lwlock::bench::DEADLOCK_GRACE_FACTOR
        ),
    )
}

fn backoff_ladder() -> Outcome {
    let report = verify::check_backoff_ladder();
    let log = verify::ladder_action_log();
    let expected = [
        WaitAction::Spin(2),
        WaitAction::Spin(4),
        WaitAction::Spin(8),
        WaitAction::Yield,
        WaitAction::Yield,
        WaitAction::SuspendAttempt { suspended: false },
    ];
    match log {
        Ok(log) if report.passed() && log == expected => Outcome::Pass(format!("{log:?}")),
        Ok(log) => Outcome::Fail(format!("{report}; live log {log:?}")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn handshake() -> Outcome {
    let orderings = enumerate_handshake();
    let lost = orderings
        .iter()
        .filter(|(_, o)| *o == HandshakeOutcome::LostWakeup)
        .count();
    let mut failures = Vec::new();
    if orderings.len() != 3 || lost != 0 {
        failures.push(format!("{} orderings, {lost} lost wakeups", orderings.len()));
    }
    let model = check_handshake_interleavings();
    note(model.to_string());
    if !model.passed() {
        failures.push(model.to_string());
    }
    for (carriers, tasks) in [(1, 4), (2, 4), (4, 8)] {
        let stress = check_handshake_stress(carriers, tasks, HANDOFFS, Duration::from_secs(60));
        note(stress.to_string());
        if !stress.passed() {
            failures.push(stress.to_string());
        }
    }
    verdict(
        &failures,
        format!("3 orderings, 0 lost wakeups; {HANDOFFS} suspend-path handoffs x3 configs without a hang"),
    )
}

fn mcs_fifo() -> Outcome {
    const TASKS: usize = 8;
    let config = RuntimeConfig::with_carriers(1).pool_policy(PoolPolicy::SingleGlobalFifo);
    let run = runtime::start_with_timeout(config, Duration::from_secs(30), || {
        let lock = Arc::new(McsLock::new(WaitSpec::default()));
        let enqueued = Arc::new(Mutex::new(Vec::new()));
        let acquired = Arc::new(Mutex::new(Vec::new()));
        let mut node = LockNode::new();
        let guard = lock.acquire(&mut node);
        let tasks: Vec<_> = (0..TASKS)
            .map(|id| {
                let (l, e, a) = (lock.clone(), enqueued.clone(), acquired.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    e.lock().unwrap().push(id);
                    let _held = l.acquire(&mut node);
                    a.lock().unwrap().push(id);
                })
                .unwrap()
            })
            .collect();
        while enqueued.lock().unwrap().len() < TASKS {
            runtime::yield_now();
        }
        drop(guard);
        tasks.into_iter().for_each(|t| t.join().unwrap());
        let e = enqueued.lock().unwrap().clone();
        let a = acquired.lock().unwrap().clone();
        (e, a)
    });
    match run {
        Ok((e, a)) if e == a && a.len() == TASKS => Outcome::Pass(format!("acquired in enqueue order {a:?}")),
        Ok((e, a)) => Outcome::Fail(format!("enqueued {e:?}, acquired {a:?}")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

/// Reference: sort, then index with an integer ceiling so no float rounding
/// is involved. Quantiles are drawn as k / 1000.
fn reference(samples: &[u64], ks: &[u64]) -> Vec<u64> {
    let mut sorted = samples.to_vec();
    sorted.sort();
    let n = sorted.len() as u64;
    ks.iter()
        .map(|&k| {
            let rank = (k * n).div_ceil(1000).max(1);
            sorted[(rank - 1) as usize]
        })
        .collect()
}

fn quantile_oracle() -> Outcome {
    let mut rng = SmallRng::seed_from_u64(0x5eed);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        let spread = if case % 3 == 0 { 10 } else { 1_000_000_000 };
        let samples: Vec<u64> = (0..n).map(|_| rng.random_range(0..spread)).collect();
        let mut ks: Vec<u64> = (0..5).map(|_| rng.random_range(1..=1000)).collect();
        ks.extend([500, 950, 990, 1000]);
        let qs: Vec<f64> = ks.iter().map(|&k| k as f64 / 1000.0).collect();
        let got = compute_quantiles(&samples, &qs).expect("valid input");
        let want = reference(&samples, &ks);
        if got != want {
            mismatches.push(format!("case {case}: n={n} qs={qs:?} got {got:?} want {want:?}"));
        }
    }
    if mismatches.is_empty() {
        Outcome::Pass("1000 random inputs match the full-sort reference".into())
    } else {
        Outcome::Fail(format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))
    }
}

fn q99_median(strategy: StrategyMask, carriers: usize) -> Result<u64, String> {
    let config = BenchConfig {
        lock: LockKind::Mcs,
        strategy,
        scenario: Scenario::CacheLineIncrement,
        carriers,
        tasks: 16 * carriers,
        duration: Duration::from_secs(1),
        warmup: Duration::ZERO,
        repetitions: 3,
        ..BenchConfig::default()
    };
    let mut q99 = Vec::new();
    for rep in 0..config.repetitions {
        let out = run_repetition(&config, rep, config.duration).map_err(|e| e.to_string())?;
        if out.record.status != RunStatus::Ok {
            return Err(format!("{strategy} rep {rep} {}", out.record.status));
        }
        q99.push(out.record.lat_ns_q99);
    }
    median(&q99).map_err(|e| e.to_string())
}

fn latency_trend() -> Outcome {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    if hw < 8 {
        return Outcome::Info(format!(
            "skipped: {hw} hardware thread(s) available, the comparison needs at least 8"
        ));
    }
    let carriers = 8;
    match (
        q99_median(StrategyMask::SYS, carriers),
        q99_median(StrategyMask::_Y_, carriers),
    ) {
        (Ok(sys), Ok(y)) => {
            let ratio = sys as f64 / y.max(1) as f64;
            let held = if ratio <= 2.0 { "holds" } else { "does not hold" };
            Outcome::Info(format!("q99 SYS={sys}ns *Y*={y}ns ratio {ratio:.2} (<= 2 {held})"))
        }
        (a, b) => Outcome::Info(format!("run failed: {:?} {:?}", a.err(), b.err())),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("mutual exclusion", mutual_exclusion),
        ("deadlock freedom", deadlock_freedom),
        ("backoff ladder conformance", backoff_ladder),
        ("handshake safety", handshake),
        ("MCS FIFO fairness", mcs_fifo),
        ("quantile oracle", quantile_oracle),
        ("latency trend (informational)", latency_trend),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = check();
        note(format!("{name} took {:.1?}", t.elapsed()));
        if matches!(outcome, Outcome::Fail(_)) {
            failed += 1;
        }
        line(name, &outcome);
    }
    println!("{failed} gating criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
