use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lwlock::backoff::{StrategyMask, WaitSpec};
use lwlock::locks::{BaselineMutex, CohortLock, CoopLock, LockKind, LockNode, McsLock, QueueSelection, TtasLock};
use lwlock::runtime::{self, PoolPolicy, RuntimeConfig};
use lwlock::verify::{check_mutual_exclusion, check_mutual_exclusion_with, Verdict};

const HANG: Duration = Duration::from_secs(120);

#[test]
fn ttas_uncontended_acquire_needs_no_backoff() {
    let lock = TtasLock::default();
    assert_eq!(lock.lock_flag(), 0);
    assert!(lock.is_locked());
    assert!(!lock.try_lock());
    lock.unlock_flag();
    assert!(!lock.is_locked());
}

#[test]
#[should_panic(expected = "without holding")]
#[cfg(debug_assertions)]
fn ttas_double_unlock_is_caught() {
    let lock = TtasLock::default();
    lock.lock_flag();
    lock.unlock_flag();
    lock.unlock_flag();
}

#[test]
fn ttas_waiter_gets_the_lock_once_the_yielding_holder_lets_go() {
    let order = runtime::start(RuntimeConfig::with_carriers(1), || {
        let lock = Arc::new(TtasLock::default());
        let log = Arc::new(Mutex::new(Vec::new()));
        lock.lock_flag();
        let (l, g) = (lock.clone(), log.clone());
        let waiter = runtime::spawn(move || {
            let waited = l.lock_flag();
            g.lock().unwrap().push("waiter");
            l.unlock_flag();
            waited
        })
        .unwrap();
        for _ in 0..20 {
            runtime::yield_now();
        }
        log.lock().unwrap().push("holder");
        lock.unlock_flag();
        let waited = waiter.join().unwrap();
        assert!(waited > 0);
        Arc::try_unwrap(log).unwrap().into_inner().unwrap()
    })
    .unwrap();
    assert_eq!(order, ["holder", "waiter"]);
}

#[test]
fn ttas_ping_pong() {
    let total = runtime::start_with_timeout(RuntimeConfig::with_carriers(2), HANG, || {
        let lock = Arc::new(TtasLock::default());
        let counter = Arc::new(AtomicU64::new(0));
        let players: Vec<_> = (0..2)
            .map(|_| {
                let (l, c) = (lock.clone(), counter.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for _ in 0..5_000 {
                        let _g = l.acquire(&mut node);
                        c.store(c.load(Ordering::Relaxed) + 1, Ordering::Relaxed);
                        runtime::yield_now();
                    }
                })
                .unwrap()
            })
            .collect();
        players.into_iter().for_each(|p| p.join().unwrap());
        counter.load(Ordering::Relaxed)
    })
    .unwrap();
    assert_eq!(total, 10_000);
}

#[test]
fn every_lock_excludes_under_load() {
    for lock in [
        LockKind::Ttas,
        LockKind::Mcs,
        LockKind::Cohort { queues: 1 },
        LockKind::Cohort { queues: 4 },
        LockKind::Baseline,
    ] {
        for carriers in [1, 4] {
            let report = check_mutual_exclusion(lock, StrategyMask::SYS, carriers, 16, 10_000);
            assert!(report.passed(), "{report}");
        }
    }
}

/// A lock that does nothing, to show the oracle notices.
struct NoLock;

impl CoopLock for NoLock {
    unsafe fn lock(&self, _node: &LockNode) {}
    unsafe fn unlock(&self, _node: &LockNode) {}
    fn name(&self) -> String {
        "NONE".into()
    }
}

#[test]
fn mutual_exclusion_oracle_catches_a_broken_lock() {
    let report = check_mutual_exclusion_with("no lock".into(), || NoLock, 1, 8, 1_000);
    assert_eq!(report.verdict, Verdict::Fail, "{report}");
}

#[test]
fn mcs_serves_waiters_in_arrival_order() {
    let order = runtime::start(
        RuntimeConfig::with_carriers(1).pool_policy(PoolPolicy::SingleGlobalFifo),
        || {
            let lock = Arc::new(McsLock::new(WaitSpec::default()));
            let log = Arc::new(Mutex::new(Vec::new()));
            let mut node = LockNode::new();
            let guard = lock.acquire(&mut node);
            let waiters: Vec<_> = ['A', 'B', 'C']
                .into_iter()
                .map(|name| {
                    let (l, g) = (lock.clone(), log.clone());
                    runtime::spawn(move || {
                        let mut node = LockNode::new();
                        let _held = l.acquire(&mut node);
                        g.lock().unwrap().push(name);
                    })
                    .unwrap()
                })
                .collect();
            for _ in 0..10 {
                runtime::yield_now();
            }
            drop(guard);
            waiters.into_iter().for_each(|w| w.join().unwrap());
            Arc::try_unwrap(log).unwrap().into_inner().unwrap()
        },
    )
    .unwrap();
    assert_eq!(order, ['A', 'B', 'C']);
}

#[test]
fn mcs_with_sixty_four_tasks_and_a_parallel_section_completes() {
    let total = runtime::start_with_timeout(RuntimeConfig::with_carriers(4), HANG, || {
        let lock = Arc::new(McsLock::new(WaitSpec::default()));
        let counter = Arc::new(AtomicU64::new(0));
        let tasks: Vec<_> = (0..64)
            .map(|_| {
                let (l, c) = (lock.clone(), counter.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for _ in 0..3 {
                        let _g = l.acquire(&mut node);
                        let helpers: Vec<_> = (0..4).map(|_| runtime::spawn(runtime::yield_now).unwrap()).collect();
                        helpers.into_iter().for_each(|h| h.join().unwrap());
                        c.fetch_add(1, Ordering::Relaxed);
                    }
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        counter.load(Ordering::Relaxed)
    })
    .unwrap();
    assert_eq!(total, 192);
}

#[test]
fn cohort_counters_balance() {
    let (stats, total) = runtime::start_with_timeout(RuntimeConfig::with_carriers(4), HANG, || {
        let lock = Arc::new(CohortLock::new(4, QueueSelection::CarrierModN, WaitSpec::default()));
        let counter = Arc::new(AtomicU64::new(0));
        let tasks: Vec<_> = (0..32)
            .map(|_| {
                let (l, c) = (lock.clone(), counter.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for i in 0..3_125 {
                        let _g = l.acquire(&mut node);
                        c.store(c.load(Ordering::Relaxed) + 1, Ordering::Relaxed);
                        if i % 64 == 0 {
                            runtime::yield_now();
                        }
                    }
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        (lock.stats(), counter.load(Ordering::Relaxed))
    })
    .unwrap();
    assert_eq!(total, 100_000);
    assert_eq!(stats.fast_path + stats.via_queue, total);
    assert_eq!(stats.releases, total);
    assert_eq!(stats.head_transitions.iter().sum::<u64>(), stats.via_queue);
    assert_eq!(stats.head_transitions.len(), 4);
}

#[test]
fn cohort_random_selection_excludes() {
    let report = check_mutual_exclusion_with(
        "cohort random".into(),
        || CohortLock::new(3, QueueSelection::Random, WaitSpec::default()),
        2,
        12,
        5_000,
    );
    assert!(report.passed(), "{report}");
}

#[test]
fn baseline_loser_suspends_and_is_handed_the_lock() {
    runtime::start(RuntimeConfig::with_carriers(1), || {
        let lock = Arc::new(BaselineMutex::new());
        lock.lock_mutex();
        let l = lock.clone();
        let loser = runtime::spawn(move || {
            l.lock_mutex();
            l.unlock_mutex();
        })
        .unwrap();
        while lock.waiters() == 0 {
            runtime::yield_now();
        }
        assert_eq!(lock.waiters(), 1);
        lock.unlock_mutex();
        loser.join().unwrap();
        assert_eq!(lock.waiters(), 0);
        assert!(!lock.is_locked());
    })
    .unwrap();
}

#[test]
fn any_lock_reports_its_cli_name() {
    for name in ["TTAS", "MCS", "TTAS-MCS-3", "BASELINE"] {
        let kind: LockKind = name.parse().unwrap();
        let lock = lwlock::AnyLock::new(kind, WaitSpec::default(), QueueSelection::default());
        assert_eq!(lock.name(), name);
        assert_eq!(kind.to_string(), name);
    }
    assert!("FOO".parse::<LockKind>().is_err());
}
