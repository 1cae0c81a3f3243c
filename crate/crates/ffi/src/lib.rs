//! C ABI over `lwlock`.
//!
//! Every function returns an [`LwStatus`]; results come back through out
//! pointers. Objects are opaque heap handles created by a `*_new` function and
//! released by the matching `*_free`. Panics never cross the boundary: they
//! are caught and reported as [`LwStatus::Internal`].

use std::ffi::{c_char, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use lwlock::backoff::{BackoffConfig, StrategyMask, WaitSpec};
use lwlock::bench::{self, BenchConfig, RunStatus, Scenario};
use lwlock::locks::{AnyLock, CoopLock, LockKind, LockNode, QueueSelection};
use lwlock::runtime::{self, JoinHandle, PoolPolicy, RuntimeConfig, RuntimeError};
use lwlock::sync::{BarrierRole, CoopBarrier};
use lwlock::verify;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NotInTask = 3,
    ShutDown = 4,
    Panicked = 5,
    Deadlocked = 6,
    InvalidHandle = 7,
    AlreadyJoined = 8,
    Resource = 9,
    Internal = 10,
}

impl From<RuntimeError> for LwStatus {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Config(_) => LwStatus::InvalidArgument,
            RuntimeError::NotInTask => LwStatus::NotInTask,
            RuntimeError::ShutDown => LwStatus::ShutDown,
            RuntimeError::Panicked(_) => LwStatus::Panicked,
            RuntimeError::NotFinished => LwStatus::Internal,
            RuntimeError::Deadlocked(_) => LwStatus::Deadlocked,
            RuntimeError::InvalidHandle(_) => LwStatus::InvalidHandle,
            RuntimeError::Resource(_) => LwStatus::Resource,
        }
    }
}

/// Static, NUL-terminated description of `status`.
#[no_mangle]
pub extern "C" fn lw_status_str(status: LwStatus) -> *const c_char {
    let s: &'static CStr = match status {
        LwStatus::Ok => c"ok",
        LwStatus::NullArgument => c"null argument",
        LwStatus::InvalidArgument => c"invalid argument",
        LwStatus::NotInTask => c"not called from a lightweight task",
        LwStatus::ShutDown => c"runtime is shutting down",
        LwStatus::Panicked => c"task panicked",
        LwStatus::Deadlocked => c"timed out, presumed deadlocked",
        LwStatus::InvalidHandle => c"invalid or already consumed resume handle",
        LwStatus::AlreadyJoined => c"task already joined",
        LwStatus::Resource => c"out of resources",
        LwStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

fn guarded(f: impl FnOnce() -> LwStatus) -> LwStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(LwStatus::Internal)
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return LwStatus::NullArgument;
        })+
    };
}

/// Task body or callback: receives the user pointer given alongside it.
/// NULL is rejected with [`LwStatus::NullArgument`].
pub type LwCallback = Option<extern "C" fn(user: *mut c_void)>;

/// Called with a freshly minted resume handle while the caller is suspending.
pub type LwPublishCallback = Option<extern "C" fn(handle: usize, user: *mut c_void)>;

#[derive(Clone, Copy)]
struct UserPtr(*mut c_void);

// SAFETY: the C caller promises the pointee may be used from any carrier.
unsafe impl Send for UserPtr {}

impl UserPtr {
    fn call(self, f: extern "C" fn(*mut c_void)) {
        f(self.0)
    }
}

/// Ready pool selection for [`lw_runtime_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwPoolPolicy {
    SingleGlobalFifo = 0,
    PerCarrierStealing = 1,
}

/// Starts a runtime with `carriers` carrier threads, runs `root(user)` as its
/// first task and returns once every task has finished. With a non-zero
/// `timeout_ms` the run is abandoned after that long and
/// [`LwStatus::Deadlocked`] is returned.
#[no_mangle]
pub extern "C" fn lw_runtime_run(
    carriers: usize,
    pool: LwPoolPolicy,
    timeout_ms: u64,
    root: LwCallback,
    user: *mut c_void,
) -> LwStatus {
    let Some(root) = root else {
        return LwStatus::NullArgument;
    };
    guarded(|| {
        let config = RuntimeConfig::with_carriers(carriers).pool_policy(match pool {
            LwPoolPolicy::SingleGlobalFifo => PoolPolicy::SingleGlobalFifo,
            LwPoolPolicy::PerCarrierStealing => PoolPolicy::PerCarrierStealing,
        });
        let user = UserPtr(user);
        let body = move || user.call(root);
        let outcome = if timeout_ms == 0 {
            runtime::start(config, body)
        } else {
            runtime::start_with_timeout(config, Duration::from_millis(timeout_ms), body)
        };
        match outcome {
            Ok(()) => LwStatus::Ok,
            Err(e) => e.into(),
        }
    })
}

/// Handle of a spawned task.
pub struct LwTask {
    join: Mutex<Option<JoinHandle<()>>>,
}

/// Spawns `body(user)` as a new task of the current runtime.
///
/// # Safety
/// `out` must be valid for writes. `user` must stay valid until the task
/// finishes.
#[no_mangle]
pub unsafe extern "C" fn lw_spawn(body: LwCallback, user: *mut c_void, out: *mut *mut LwTask) -> LwStatus {
    let Some(body) = body else {
        return LwStatus::NullArgument;
    };
    non_null!(out);
    guarded(|| {
        let user = UserPtr(user);
        match runtime::spawn(move || user.call(body)) {
            Ok(handle) => {
                let task = Box::new(LwTask {
                    join: Mutex::new(Some(handle)),
                });
                // SAFETY: checked non-null; the caller provides writable storage.
                unsafe { *out = Box::into_raw(task) };
                LwStatus::Ok
            }
            Err(e) => e.into(),
        }
    })
}

/// Waits for the task to finish. A second join on the same handle returns
/// [`LwStatus::AlreadyJoined`]. The handle still has to be freed.
///
/// # Safety
/// `task` must come from [`lw_spawn`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lw_join(task: *mut LwTask) -> LwStatus {
    non_null!(task);
    guarded(|| {
        // SAFETY: caller contract.
        let task = unsafe { &*task };
        let handle = task.join.lock().unwrap_or_else(|e| e.into_inner()).take();
        match handle {
            None => LwStatus::AlreadyJoined,
            Some(h) => match h.join() {
                Ok(()) => LwStatus::Ok,
                Err(e) => e.into(),
            },
        }
    })
}

/// Releases a task handle. An unjoined task keeps running, detached.
///
/// # Safety
/// `task` must come from [`lw_spawn`] and not have been freed; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lw_task_free(task: *mut LwTask) {
    if !task.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(task) });
    }
}

/// Yields the current task. Outside a task the OS thread yields and
/// [`LwStatus::NotInTask`] is returned.
#[no_mangle]
pub extern "C" fn lw_yield() -> LwStatus {
    guarded(|| {
        let in_task = runtime::in_task();
        runtime::yield_now();
        if in_task {
            LwStatus::Ok
        } else {
            LwStatus::NotInTask
        }
    })
}

/// Index of the carrier running the current task.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lw_current_carrier(out: *mut usize) -> LwStatus {
    non_null!(out);
    match runtime::current_carrier() {
        Some(c) => {
            // SAFETY: checked non-null.
            unsafe { *out = c.0 };
            LwStatus::Ok
        }
        None => LwStatus::NotInTask,
    }
}

/// Suspends the current task. `publish(handle, user)` runs once the task can
/// no longer miss a wakeup; passing `handle` to [`lw_resume`], from anywhere,
/// makes the task runnable again. The handle is valid for exactly one resume.
#[no_mangle]
pub extern "C" fn lw_suspend(publish: LwPublishCallback, user: *mut c_void) -> LwStatus {
    let Some(publish) = publish else {
        return LwStatus::NullArgument;
    };
    guarded(|| match runtime::suspend_current(|h| publish(h.into_word(), user)) {
        Ok(()) => LwStatus::Ok,
        Err(e) => e.into(),
    })
}

/// Resumes a task suspended through [`lw_suspend`]. Sentinel values (0, 1),
/// unknown and already consumed handles give [`LwStatus::InvalidHandle`].
#[no_mangle]
pub extern "C" fn lw_resume(handle: usize) -> LwStatus {
    guarded(|| match runtime::resume_raw(handle) {
        Ok(()) => LwStatus::Ok,
        Err(e) => e.into(),
    })
}

/// Ladder thresholds; see [`lw_lock_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LwBackoffConfig {
    pub yield_limit: u32,
    pub suspend_limit: u32,
    pub spin_limit: u32,
}

/// Default thresholds (8, 64, 1024).
#[no_mangle]
pub extern "C" fn lw_backoff_default() -> LwBackoffConfig {
    let d = BackoffConfig::default();
    LwBackoffConfig {
        yield_limit: d.yield_limit,
        suspend_limit: d.suspend_limit,
        spin_limit: d.spin_limit,
    }
}

/// A lock of any kind.
pub struct LwLock {
    lock: AnyLock,
}

/// Queue node for one acquisition at a time.
pub struct LwNode {
    node: LockNode,
    /// Lock currently held through this node, null when idle.
    held: AtomicPtr<LwLock>,
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, LwStatus> {
    if p.is_null() {
        return Err(LwStatus::NullArgument);
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| LwStatus::InvalidArgument)
}

unsafe fn wait_spec(strategy: *const c_char, backoff: *const LwBackoffConfig) -> Result<WaitSpec, LwStatus> {
    let strategy = if strategy.is_null() {
        StrategyMask::SYS
    } else {
        // SAFETY: forwarded caller contract.
        unsafe { c_str(strategy) }?
            .parse()
            .map_err(|_| LwStatus::InvalidArgument)?
    };
    let config = if backoff.is_null() {
        BackoffConfig::default()
    } else {
        // SAFETY: caller passes a valid struct.
        let b = unsafe { *backoff };
        BackoffConfig::new(b.yield_limit, b.suspend_limit, b.spin_limit).map_err(|_| LwStatus::InvalidArgument)?
    };
    Ok(WaitSpec::new(strategy, config))
}

/// Creates a lock by name (`TTAS`, `MCS`, `TTAS-MCS-<N>`, `BASELINE`).
/// `strategy` is a three-letter code such as `SYS` or `SY*`; NULL means `SYS`.
/// `backoff` may be NULL for the default thresholds.
///
/// # Safety
/// `name` and a non-null `strategy` must be NUL-terminated strings; a non-null
/// `backoff` must point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn lw_lock_new(
    name: *const c_char,
    strategy: *const c_char,
    backoff: *const LwBackoffConfig,
    out: *mut *mut LwLock,
) -> LwStatus {
    non_null!(out);
    guarded(|| {
        let build = || -> Result<LwLock, LwStatus> {
            // SAFETY: caller contract.
            let kind: LockKind = unsafe { c_str(name) }?.parse().map_err(|_| LwStatus::InvalidArgument)?;
            // SAFETY: caller contract.
            let wait = unsafe { wait_spec(strategy, backoff) }?;
            Ok(LwLock {
                lock: AnyLock::new(kind, wait, QueueSelection::default()),
            })
        };
        match build() {
            Ok(lock) => {
                // SAFETY: checked non-null.
                unsafe { *out = Box::into_raw(Box::new(lock)) };
                LwStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `lock` must come from [`lw_lock_new`], not be held and not be freed; NULL
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn lw_lock_free(lock: *mut LwLock) {
    if !lock.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(lock) });
    }
}

/// Allocates a queue node for one task's acquisitions.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lw_node_new(out: *mut *mut LwNode) -> LwStatus {
    non_null!(out);
    let node = Box::new(LwNode {
        node: LockNode::new(),
        held: AtomicPtr::new(ptr::null_mut()),
    });
    // SAFETY: checked non-null.
    unsafe { *out = Box::into_raw(node) };
    LwStatus::Ok
}

/// # Safety
/// `node` must come from [`lw_node_new`], not be in use and not be freed;
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lw_node_free(node: *mut LwNode) {
    if !node.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(node) });
    }
}

/// Acquires `lock` using `node`. A node already holding a lock is rejected
/// with [`LwStatus::InvalidArgument`].
///
/// # Safety
/// Both pointers must be live handles. A node may be used by one task at a
/// time.
#[no_mangle]
pub unsafe extern "C" fn lw_lock_acquire(lock: *mut LwLock, node: *mut LwNode) -> LwStatus {
    non_null!(lock, node);
    guarded(|| {
        // SAFETY: caller contract; the node is idle, so nothing else refers to it.
        let n = unsafe { &mut *node };
        if !n.held.load(Ordering::Acquire).is_null() {
            return LwStatus::InvalidArgument;
        }
        n.node.reset();
        let n = &*n;
        // SAFETY: live lock handle; the node is reset and owned by this
        // acquisition until the matching release.
        unsafe { (*lock).lock.lock(&n.node) };
        n.held.store(lock, Ordering::Release);
        LwStatus::Ok
    })
}

/// Releases `lock`, which must have been acquired through `node`; anything
/// else is rejected with [`LwStatus::InvalidArgument`].
///
/// # Safety
/// Both pointers must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lw_lock_release(lock: *mut LwLock, node: *mut LwNode) -> LwStatus {
    non_null!(lock, node);
    guarded(|| {
        // SAFETY: caller contract.
        let n = unsafe { &*node };
        if n.held.load(Ordering::Acquire) != lock {
            return LwStatus::InvalidArgument;
        }
        n.held.store(ptr::null_mut(), Ordering::Release);
        // SAFETY: held through this node, as checked above.
        unsafe { (*lock).lock.unlock(&n.node) };
        LwStatus::Ok
    })
}

pub struct LwBarrier {
    barrier: CoopBarrier,
}

/// Creates a barrier for `parties` tasks.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lw_barrier_new(parties: usize, out: *mut *mut LwBarrier) -> LwStatus {
    non_null!(out);
    if parties == 0 {
        return LwStatus::InvalidArgument;
    }
    let b = Box::new(LwBarrier {
        barrier: CoopBarrier::new(parties),
    });
    // SAFETY: checked non-null.
    unsafe { *out = Box::into_raw(b) };
    LwStatus::Ok
}

/// Waits for all parties. `is_leader` (optional) is set for exactly one
/// caller per generation.
///
/// # Safety
/// `barrier` must be a live handle; a non-null `is_leader` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_barrier_wait(barrier: *mut LwBarrier, is_leader: *mut bool) -> LwStatus {
    non_null!(barrier);
    guarded(|| {
        // SAFETY: caller contract.
        let role = unsafe { &*barrier }.barrier.wait();
        if !is_leader.is_null() {
            // SAFETY: caller contract.
            unsafe { *is_leader = role == BarrierRole::Leader };
        }
        LwStatus::Ok
    })
}

/// # Safety
/// `barrier` must come from [`lw_barrier_new`] with no waiters; NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn lw_barrier_free(barrier: *mut LwBarrier) {
    if !barrier.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(barrier) });
    }
}

/// Nearest-rank quantiles: `out[i]` receives the `qs[i]` quantile of
/// `samples`.
///
/// # Safety
/// `samples` must hold `n` values, `qs` and `out` `nq` values each.
#[no_mangle]
pub unsafe extern "C" fn lw_compute_quantiles(
    samples: *const u64,
    n: usize,
    qs: *const f64,
    nq: usize,
    out: *mut u64,
) -> LwStatus {
    non_null!(samples, qs, out);
    guarded(|| {
        // SAFETY: caller contract.
        let (samples, qs, out) = unsafe {
            (
                std::slice::from_raw_parts(samples, n),
                std::slice::from_raw_parts(qs, nq),
                std::slice::from_raw_parts_mut(out, nq),
            )
        };
        match bench::compute_quantiles(samples, qs) {
            Ok(v) => {
                out.copy_from_slice(&v);
                LwStatus::Ok
            }
            Err(_) => LwStatus::InvalidArgument,
        }
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwScenario {
    CacheLineIncrement = 0,
    Parallelizable = 1,
}

/// Benchmark parameters; strings as in [`lw_lock_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LwBenchConfig {
    pub lock: *const c_char,
    pub strategy: *const c_char,
    pub scenario: LwScenario,
    pub carriers: usize,
    pub tasks: usize,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub repetitions: u32,
    pub backoff: LwBackoffConfig,
    pub seed: u64,
}

/// One repetition's measurements.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LwBenchResult {
    pub rep: u32,
    pub duration_s: f64,
    pub acquisitions: u64,
    pub throughput_per_s: f64,
    pub lat_ns_q50: u64,
    pub lat_ns_q95: u64,
    pub lat_ns_q99: u64,
    pub deadlocked: bool,
}

/// Runs the benchmark and writes one result per repetition into `out`, which
/// must have room for `config->repetitions` entries (`cap`).
///
/// # Safety
/// `config` must be valid with live strings; `out` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn lw_bench_run(
    config: *const LwBenchConfig,
    out: *mut LwBenchResult,
    cap: usize,
    written: *mut usize,
) -> LwStatus {
    non_null!(config, out, written);
    guarded(|| {
        // SAFETY: caller contract.
        let c = unsafe { *config };
        let build = || -> Result<BenchConfig, LwStatus> {
            // SAFETY: caller contract.
            let lock: LockKind = unsafe { c_str(c.lock) }?
                .parse()
                .map_err(|_| LwStatus::InvalidArgument)?;
            // SAFETY: caller contract.
            let wait = unsafe { wait_spec(c.strategy, &c.backoff) }?;
            let secs = |s: f64| Duration::try_from_secs_f64(s).map_err(|_| LwStatus::InvalidArgument);
            Ok(BenchConfig {
                lock,
                strategy: wait.strategy,
                backoff: wait.config,
                scenario: match c.scenario {
                    LwScenario::CacheLineIncrement => Scenario::CacheLineIncrement,
                    LwScenario::Parallelizable => Scenario::Parallelizable,
                },
                carriers: c.carriers,
                tasks: c.tasks,
                duration: secs(c.duration_s)?,
                warmup: secs(c.warmup_s)?,
                repetitions: c.repetitions,
                seed: c.seed,
                ..BenchConfig::default()
            })
        };
        let config = match build() {
            Ok(b) => b,
            Err(s) => return s,
        };
        if cap < config.repetitions as usize {
            return LwStatus::InvalidArgument;
        }
        let records = match bench::run_benchmark(&config) {
            Ok(r) => r,
            Err(bench::BenchError::Config(_)) => return LwStatus::InvalidArgument,
            Err(bench::BenchError::Runtime(e)) => return e.into(),
            Err(_) => return LwStatus::Internal,
        };
        // SAFETY: caller contract, `cap` checked above.
        let out = unsafe { std::slice::from_raw_parts_mut(out, cap) };
        for (slot, r) in out.iter_mut().zip(&records) {
            *slot = LwBenchResult {
                rep: r.rep,
                duration_s: r.duration_s,
                acquisitions: r.acquisitions,
                throughput_per_s: r.throughput_per_s,
                lat_ns_q50: r.lat_ns_q50,
                lat_ns_q95: r.lat_ns_q95,
                lat_ns_q99: r.lat_ns_q99,
                deadlocked: r.status == RunStatus::Deadlocked,
            };
        }
        // SAFETY: checked non-null.
        unsafe { *written = records.len() };
        LwStatus::Ok
    })
}

/// Runs the mutual-exclusion oracle; `passed` receives the verdict.
///
/// # Safety
/// `lock` must be a NUL-terminated name, `strategy` NULL or a code, `passed`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lw_verify_mutual_exclusion(
    lock: *const c_char,
    strategy: *const c_char,
    carriers: usize,
    tasks: usize,
    iterations: u64,
    passed: *mut bool,
) -> LwStatus {
    non_null!(passed);
    guarded(|| {
        let parsed = || -> Result<(LockKind, WaitSpec), LwStatus> {
            // SAFETY: caller contract.
            let kind = unsafe { c_str(lock) }?.parse().map_err(|_| LwStatus::InvalidArgument)?;
            // SAFETY: caller contract.
            Ok((kind, unsafe { wait_spec(strategy, ptr::null()) }?))
        };
        let (kind, wait) = match parsed() {
            Ok(p) => p,
            Err(s) => return s,
        };
        if carriers == 0 || tasks == 0 {
            return LwStatus::InvalidArgument;
        }
        let report = verify::check_mutual_exclusion(kind, wait.strategy, carriers, tasks, iterations);
        // SAFETY: checked non-null.
        unsafe { *passed = report.passed() };
        LwStatus::Ok
    })
}
