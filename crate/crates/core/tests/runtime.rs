use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lwlock::runtime::{self, PoolPolicy, ResumeHandle, RuntimeConfig, RuntimeError};

const TIMEOUT: Duration = Duration::from_secs(60);

fn run<T: Send + 'static>(carriers: usize, root: impl FnOnce() -> T + Send + 'static) -> T {
    runtime::start_with_timeout(RuntimeConfig::with_carriers(carriers), TIMEOUT, root).expect("runtime run")
}

#[test]
fn single_carrier_root_runs_to_completion() {
    assert_eq!(run(1, || 6 * 7), 42);
}

#[test]
fn zero_carriers_is_a_configuration_error() {
    let err = runtime::start(RuntimeConfig::with_carriers(0), || ()).unwrap_err();
    assert!(matches!(err, RuntimeError::Config(_)), "{err:?}");
}

#[test]
fn hundred_tasks_each_run_exactly_once() {
    let counter = Arc::new(AtomicU64::new(0));
    let c = counter.clone();
    run(4, move || {
        let tasks: Vec<_> = (0..100)
            .map(|_| {
                let c = c.clone();
                runtime::spawn(move || {
                    c.fetch_add(1, Ordering::Relaxed);
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
    });
    assert_eq!(counter.load(Ordering::Relaxed), 100);
}

#[test]
fn per_task_slots_are_each_written_once() {
    const N: usize = 200;
    let slots: Arc<Vec<AtomicU64>> = Arc::new((0..N).map(|_| AtomicU64::new(0)).collect());
    let s = slots.clone();
    run(3, move || {
        let tasks: Vec<_> = (0..N)
            .map(|i| {
                let s = s.clone();
                runtime::spawn(move || {
                    s[i].fetch_add(1, Ordering::Relaxed);
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
    });
    assert!(slots.iter().all(|s| s.load(Ordering::Relaxed) == 1));
}

#[test]
fn spawned_task_waits_for_the_spawner_to_switch() {
    let (before, after) = run(1, || {
        let ran = Arc::new(AtomicBool::new(false));
        let r = ran.clone();
        let child = runtime::spawn(move || r.store(true, Ordering::Relaxed)).unwrap();
        // Busy work without a switch point.
        let mut x = 0u64;
        for i in 0..1_000_000u64 {
            x = std::hint::black_box(x.wrapping_add(i));
        }
        let before = ran.load(Ordering::Relaxed);
        runtime::yield_now();
        let after = ran.load(Ordering::Relaxed);
        child.join().unwrap();
        (before, after)
    });
    assert!(!before, "child ran without the spawner switching");
    assert!(after);
}

#[test]
fn yield_alternates_two_tasks_in_fifo_order() {
    let log = run(1, || {
        let log = Arc::new(Mutex::new(Vec::new()));
        let tasks: Vec<_> = ['A', 'B']
            .into_iter()
            .map(|name| {
                let log = log.clone();
                runtime::spawn(move || {
                    for _ in 0..50 {
                        log.lock().unwrap().push(name);
                        runtime::yield_now();
                    }
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        Arc::try_unwrap(log).unwrap().into_inner().unwrap()
    });
    let expected: Vec<char> = "AB".repeat(50).chars().collect();
    assert_eq!(log, expected);
}

#[test]
fn yielding_counters_stay_within_one_of_each_other() {
    let worst = run(1, || {
        let counters: Arc<[AtomicU64; 2]> = Arc::new([AtomicU64::new(0), AtomicU64::new(0)]);
        let worst = Arc::new(AtomicU64::new(0));
        let tasks: Vec<_> = (0..2)
            .map(|me| {
                let (counters, worst) = (counters.clone(), worst.clone());
                runtime::spawn(move || {
                    for _ in 0..1000 {
                        counters[me].fetch_add(1, Ordering::Relaxed);
                        let a = counters[0].load(Ordering::Relaxed);
                        let b = counters[1].load(Ordering::Relaxed);
                        worst.fetch_max(a.abs_diff(b), Ordering::Relaxed);
                        runtime::yield_now();
                    }
                })
                .unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        worst.load(Ordering::Relaxed)
    });
    assert!(worst <= 1, "counters drifted by {worst}");
}

#[test]
fn yield_with_nothing_else_ready_returns_to_the_caller() {
    let id = run(1, || {
        let before = runtime::current_task_id();
        runtime::yield_now();
        assert_eq!(runtime::current_task_id(), before);
        before
    });
    assert!(id.is_some());
}

#[test]
fn single_carrier_runs_ready_tasks_in_spawn_order() {
    let order = run(1, || {
        let log = Arc::new(Mutex::new(Vec::new()));
        let tasks: Vec<_> = (0..10)
            .map(|i| {
                let log = log.clone();
                runtime::spawn(move || log.lock().unwrap().push(i)).unwrap()
            })
            .collect();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        Arc::try_unwrap(log).unwrap().into_inner().unwrap()
    });
    assert_eq!(order, (0..10).collect::<Vec<_>>());
}

#[test]
fn suspended_task_continues_after_another_resumes_it() {
    let cell = Arc::new(Mutex::new(None::<ResumeHandle>));
    let done = run(1, move || {
        let c = cell.clone();
        let sleeper = runtime::spawn(move || {
            runtime::suspend_current(|h| *c.lock().unwrap() = Some(h)).unwrap();
            "woken"
        })
        .unwrap();
        let handle = loop {
            if let Some(h) = cell.lock().unwrap().take() {
                break h;
            }
            runtime::yield_now();
        };
        runtime::resume(handle).unwrap();
        sleeper.join().unwrap()
    });
    assert_eq!(done, "woken");
}

fn handshake_stress(carriers: usize, pairs: usize) -> usize {
    run(carriers, move || {
        let cells: Arc<Vec<Mutex<Option<ResumeHandle>>>> = Arc::new((0..pairs).map(|_| Mutex::new(None)).collect());
        let completed = Arc::new(AtomicUsize::new(0));
        let sleepers: Vec<_> = (0..pairs)
            .map(|i| {
                let (cells, completed) = (cells.clone(), completed.clone());
                runtime::spawn(move || {
                    runtime::suspend_current(|h| *cells[i].lock().unwrap() = Some(h)).unwrap();
                    completed.fetch_add(1, Ordering::Relaxed);
                })
                .unwrap()
            })
            .collect();
        let wakers: Vec<_> = (0..carriers)
            .map(|w| {
                let cells = cells.clone();
                runtime::spawn(move || {
                    for i in (w..pairs).step_by(carriers) {
                        let handle = loop {
                            if let Some(h) = cells[i].lock().unwrap().take() {
                                break h;
                            }
                            runtime::yield_now();
                        };
                        runtime::resume(handle).unwrap();
                    }
                })
                .unwrap()
            })
            .collect();
        wakers.into_iter().for_each(|t| t.join().unwrap());
        sleepers.into_iter().for_each(|t| t.join().unwrap());
        completed.load(Ordering::Relaxed)
    })
}

#[test]
fn thousand_cross_carrier_handshakes_two_carriers() {
    assert_eq!(handshake_stress(2, 1000), 1000);
}

#[test]
fn thousand_handshakes_four_carriers() {
    assert_eq!(handshake_stress(4, 1000), 1000);
}

#[test]
fn ten_thousand_handshakes_lose_nothing() {
    assert_eq!(handshake_stress(2, 10_000), 10_000);
}

#[test]
fn a_handle_is_consumed_by_its_first_resume() {
    let second = run(1, || {
        let cell = Arc::new(Mutex::new(None::<usize>));
        let c = cell.clone();
        let sleeper = runtime::spawn(move || {
            runtime::suspend_current(|h| *c.lock().unwrap() = Some(h.into_word())).unwrap();
        })
        .unwrap();
        let word = loop {
            if let Some(w) = *cell.lock().unwrap() {
                break w;
            }
            runtime::yield_now();
        };
        runtime::resume_raw(word).unwrap();
        sleeper.join().unwrap();
        runtime::resume_raw(word)
    });
    assert!(matches!(second, Err(RuntimeError::InvalidHandle(_))), "{second:?}");
}

#[test]
fn sentinel_words_are_rejected() {
    assert!(ResumeHandle::from_word(0).is_none());
    assert!(ResumeHandle::from_word(1).is_none());
    assert!(matches!(runtime::resume_raw(0), Err(RuntimeError::InvalidHandle(0))));
    assert!(matches!(runtime::resume_raw(1), Err(RuntimeError::InvalidHandle(1))));
    assert!(matches!(
        runtime::resume_raw(12345),
        Err(RuntimeError::InvalidHandle(_))
    ));
}

#[test]
fn single_carrier_is_always_carrier_zero() {
    let seen = run(1, || {
        let mut seen = Vec::new();
        for _ in 0..10 {
            seen.push(runtime::current_carrier().unwrap().0);
            runtime::yield_now();
        }
        seen
    });
    assert!(seen.iter().all(|&c| c == 0));
    assert!(runtime::current_carrier().is_none());
}

#[test]
fn carrier_ids_stay_in_range() {
    for policy in [PoolPolicy::SingleGlobalFifo, PoolPolicy::PerCarrierStealing] {
        let config = RuntimeConfig::with_carriers(4).pool_policy(policy);
        let seen = runtime::start_with_timeout(config, TIMEOUT, || {
            let tasks: Vec<_> = (0..64)
                .map(|_| {
                    runtime::spawn(|| {
                        runtime::yield_now();
                        runtime::current_carrier().unwrap().0
                    })
                    .unwrap()
                })
                .collect();
            tasks.into_iter().map(|t| t.join().unwrap()).collect::<Vec<_>>()
        })
        .unwrap();
        assert!(seen.iter().all(|&c| c < 4), "{policy:?}: {seen:?}");
        assert_eq!(runtime::carrier_count(), None);
    }
}

#[test]
fn joining_a_finished_task_returns_its_value() {
    let v = run(1, || {
        let child = runtime::spawn(|| 5).unwrap();
        for _ in 0..3 {
            runtime::yield_now();
        }
        assert!(child.is_finished());
        child.join().unwrap()
    });
    assert_eq!(v, 5);
}

#[test]
fn join_lets_the_child_run_on_one_carrier() {
    let v = run(1, || {
        let child = runtime::spawn(|| {
            for _ in 0..10 {
                runtime::yield_now();
            }
            7
        })
        .unwrap();
        child.join().unwrap()
    });
    assert_eq!(v, 7);
}

#[test]
fn twelve_children_are_joined() {
    let noops = run(2, || {
        let done = Arc::new(AtomicU64::new(0));
        let children: Vec<_> = (0..12)
            .map(|_| {
                let done = done.clone();
                runtime::spawn(move || {
                    lwlock::bench::scenario::noops(10_000);
                    done.fetch_add(10_000, Ordering::Relaxed);
                })
                .unwrap()
            })
            .collect();
        children.into_iter().for_each(|c| c.join().unwrap());
        done.load(Ordering::Relaxed)
    });
    assert_eq!(noops, 120_000);
}

#[test]
fn panics_surface_through_join() {
    let r = run(1, || runtime::spawn(|| panic!("boom")).unwrap().join());
    match r {
        Err(RuntimeError::Panicked(msg)) => assert!(msg.contains("boom")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn spawned_minus_completed_equals_live() {
    let (mid, end) = run(2, || {
        let tasks: Vec<_> = (0..20).map(|_| runtime::spawn(runtime::yield_now).unwrap()).collect();
        let mid = runtime::stats().unwrap();
        tasks.into_iter().for_each(|t| t.join().unwrap());
        (mid, runtime::stats().unwrap())
    });
    for s in [mid, end] {
        assert_eq!(s.spawned - s.completed, s.live as u64, "{s:?}");
    }
    // Root plus twenty children, all done except the root itself.
    assert_eq!(end.spawned, 21);
    assert_eq!(end.live, 1);
}

#[test]
fn spawn_after_shutdown_is_rejected() {
    let outcome = Arc::new(Mutex::new(None));
    let o = outcome.clone();
    run(1, move || {
        runtime::spawn(move || {
            // Let the root return first.
            for _ in 0..5 {
                runtime::yield_now();
            }
            *o.lock().unwrap() = Some(runtime::spawn(|| ()).map(|_| ()));
        })
        .unwrap();
    });
    let outcome = outcome.lock().unwrap().take().expect("straggler ran");
    assert!(matches!(outcome, Err(RuntimeError::ShutDown)), "{outcome:?}");
}

#[test]
fn spawn_outside_a_runtime_is_rejected() {
    assert!(matches!(runtime::spawn(|| ()), Err(RuntimeError::NotInTask)));
    assert!(!runtime::in_task());
}

#[test]
fn timeout_abandons_a_spinning_runtime() {
    let err = runtime::start_with_timeout(RuntimeConfig::with_carriers(1), Duration::from_millis(200), || {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        // Never set: the waiter below spins through the backoff ladder
        // without yielding, which is the only thing that can be cancelled.
        let _keep = runtime::spawn(move || f.store(true, Ordering::Relaxed)).unwrap();
        let word = lwlock::backoff::ResumeWord::new();
        let spec = lwlock::backoff::WaitSpec::new(lwlock::StrategyMask::S__, Default::default());
        let mut policy = lwlock::BackoffPolicy::with_node(&word, spec);
        loop {
            policy.on_spin_wait();
        }
    })
    .unwrap_err();
    assert!(matches!(err, RuntimeError::Deadlocked(_)), "{err:?}");
}
