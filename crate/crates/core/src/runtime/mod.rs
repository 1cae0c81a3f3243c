//! A minimal cooperative runtime for stackful lightweight tasks.
//!
//! [`start`] launches `carriers` OS threads that pull ready tasks from the
//! pools selected by [`PoolPolicy`] and run them on their own stacks. A task
//! leaves its carrier only at [`yield_now`], [`suspend_current`] /
//! [`try_suspend_current`], inside [`JoinHandle::join`] (which waits through
//! those), or when its body returns. There is no preemption: a task that
//! never reaches one of these points keeps its carrier forever.
//!
//! Suspension publishes a [`ResumeHandle`] through a callback before the task
//! is descheduled. A [`resume`] that arrives while the task is still on its
//! way out of the carrier is remembered and the task is requeued as soon as
//! the switch completes, so resume-after-publish is never lost.
//!
//! Code running inside a task may migrate to another carrier at every switch
//! point. Thread-locals must not be borrowed across one.

mod handle;
mod pool;
mod task;

use std::cell::Cell;
use std::ptr;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use corosensei::stack::DefaultStack;
use corosensei::CoroutineResult;
use rand::rngs::SmallRng;
use rand::SeedableRng;
use thiserror::Error;

pub use handle::ResumeHandle;
pub use task::{JoinHandle, TaskId};

use crate::backoff::KEEP_ACTIVE;
use pool::Pools;
use task::{Switch, Task, NOTIFIED, PARKED, PARKING, RUNNABLE};

/// Default size of a task stack.
pub const DEFAULT_STACK_SIZE: usize = 64 * 1024;

const MAX_CACHED_STACKS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolPolicy {
    /// One FIFO shared by all carriers.
    SingleGlobalFifo,
    /// One FIFO per carrier; an idle carrier steals from a random victim.
    PerCarrierStealing,
}

impl std::str::FromStr for PoolPolicy {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "global" | "single-global-fifo" => Ok(PoolPolicy::SingleGlobalFifo),
            "stealing" | "per-carrier" | "per-carrier-fifo-with-stealing" => Ok(PoolPolicy::PerCarrierStealing),
            _ => Err(RuntimeError::Config(format!("unknown pool policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub carriers: usize,
    pub pool_policy: PoolPolicy,
    pub stack_size: usize,
    /// Mixed into every task's private random generator.
    pub seed: u64,
}

impl RuntimeConfig {
    pub fn with_carriers(carriers: usize) -> Self {
        Self {
            carriers,
            ..Self::default()
        }
    }

    pub fn pool_policy(mut self, policy: PoolPolicy) -> Self {
        self.pool_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.carriers == 0 {
            return Err(RuntimeError::Config("at least one carrier thread is required".into()));
        }
        if self.stack_size < 16 * 1024 {
            return Err(RuntimeError::Config(format!(
                "stack size {} is below the 16 KiB minimum",
                self.stack_size
            )));
        }
        Ok(())
    }
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            carriers: 1,
            pool_policy: PoolPolicy::SingleGlobalFifo,
            stack_size: DEFAULT_STACK_SIZE,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("invalid runtime configuration: {0}")]
    Config(String),
    #[error("not running inside a lightweight task")]
    NotInTask,
    #[error("runtime is shutting down, spawn rejected")]
    ShutDown,
    #[error("task panicked: {0}")]
    Panicked(String),
    #[error("task result is not available")]
    NotFinished,
    #[error("runtime did not finish within {0:?}; remaining tasks were abandoned")]
    Deadlocked(Duration),
    #[error("invalid or already consumed resume handle {0:#x}")]
    InvalidHandle(usize),
    #[error("failed to allocate a task stack or carrier thread: {0}")]
    Resource(String),
}

/// Index of a carrier thread within its runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CarrierId(pub usize);

/// Task counters of the current runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeStats {
    pub spawned: u64,
    pub completed: u64,
    pub live: usize,
}

pub(crate) struct Shared {
    config: RuntimeConfig,
    pools: Pools,
    live: AtomicUsize,
    spawned: AtomicU64,
    completed: AtomicU64,
    /// Root finished: no new spawns.
    closing: AtomicBool,
    cancelled: AtomicBool,
    sleepers: AtomicUsize,
    idle_lock: Mutex<()>,
    idle_cv: Condvar,
    finished: Mutex<bool>,
    finished_cv: Condvar,
    stacks: Mutex<Vec<DefaultStack>>,
}

impl Shared {
    fn new(config: RuntimeConfig) -> Self {
        Self {
            pools: Pools::new(config.pool_policy, config.carriers),
            config,
            live: AtomicUsize::new(0),
            spawned: AtomicU64::new(0),
            completed: AtomicU64::new(0),
            closing: AtomicBool::new(false),
            cancelled: AtomicBool::new(false),
            sleepers: AtomicUsize::new(0),
            idle_lock: Mutex::new(()),
            idle_cv: Condvar::new(),
            finished: Mutex::new(false),
            finished_cv: Condvar::new(),
            stacks: Mutex::new(Vec::new()),
        }
    }

    fn take_stack(&self) -> Result<DefaultStack, RuntimeError> {
        if let Some(stack) = self.stacks.lock().unwrap_or_else(|e| e.into_inner()).pop() {
            return Ok(stack);
        }
        DefaultStack::new(self.config.stack_size).map_err(|e| RuntimeError::Resource(e.to_string()))
    }

    fn recycle_stack(&self, stack: DefaultStack) {
        let mut stacks = self.stacks.lock().unwrap_or_else(|e| e.into_inner());
        if stacks.len() < MAX_CACHED_STACKS {
            stacks.push(stack);
        }
    }

    fn spawn_task<F, T>(self: &Arc<Self>, is_root: bool, body: F) -> Result<JoinHandle<T>, RuntimeError>
    where
        F: FnOnce() -> T + Send + 'static,
        T: Send + 'static,
    {
        let stack = self.take_stack()?;
        let (task, handle) = task::build(self, stack, is_root, body);
        self.live.fetch_add(1, Ordering::AcqRel);
        self.spawned.fetch_add(1, Ordering::Relaxed);
        self.schedule(task);
        Ok(handle)
    }

    fn schedule(self: &Arc<Self>, task: Arc<Task>) {
        self.pools.push(task, carrier_of(self));
        self.wake_one();
    }

    fn wake_one(&self) {
        fence(Ordering::SeqCst);
        if self.sleepers.load(Ordering::SeqCst) > 0 {
            let _guard = self.idle_lock.lock().unwrap_or_else(|e| e.into_inner());
            self.idle_cv.notify_one();
        }
    }

    fn wake_all(&self) {
        let _guard = self.idle_lock.lock().unwrap_or_else(|e| e.into_inner());
        self.idle_cv.notify_all();
    }

    fn is_finished(&self) -> bool {
        *self.finished.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn finish(&self) {
        *self.finished.lock().unwrap_or_else(|e| e.into_inner()) = true;
        self.finished_cv.notify_all();
        self.wake_all();
    }

    fn idle_wait(&self) {
        let guard = self.idle_lock.lock().unwrap_or_else(|e| e.into_inner());
        self.sleepers.fetch_add(1, Ordering::SeqCst);
        fence(Ordering::SeqCst);
        if self.pools.is_empty() && !self.cancelled.load(Ordering::Acquire) && !self.is_finished() {
            let _ = self
                .idle_cv
                .wait_timeout(guard, Duration::from_millis(20))
                .unwrap_or_else(|e| e.into_inner());
        }
        self.sleepers.fetch_sub(1, Ordering::SeqCst);
    }

    /// Waits for root completion and drain. Returns false on timeout.
    fn wait_finished(&self, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut done = self.finished.lock().unwrap_or_else(|e| e.into_inner());
        while !*done {
            match deadline {
                None => done = self.finished_cv.wait(done).unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return false;
                    }
                    done = self
                        .finished_cv
                        .wait_timeout(done, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
            }
        }
        true
    }

    fn complete(self: &Arc<Self>, task: Arc<Task>) {
        // SAFETY: this carrier owns the task and its coroutine returned.
        if let Some(stack) = unsafe { task.take_finished_stack() } {
            self.recycle_stack(stack);
        }
        if task.is_root {
            self.closing.store(true, Ordering::Release);
        }
        task.done.store(true, Ordering::Release);
        let prior = task.join_word.disarm();
        self.completed.fetch_add(1, Ordering::Relaxed);
        if let Some(joiner) = prior {
            resume(joiner).expect("join word held a consumed handle");
        }
        if self.live.fetch_sub(1, Ordering::AcqRel) == 1 && self.closing.load(Ordering::Acquire) {
            self.finish();
        }
    }

    fn park(self: &Arc<Self>, task: Arc<Task>) {
        match task
            .state
            .compare_exchange(PARKING, PARKED, Ordering::AcqRel, Ordering::Acquire)
        {
            // The registry holds its own reference now.
            Ok(_) => {}
            Err(NOTIFIED) => {
                task.state.store(RUNNABLE, Ordering::Release);
                self.schedule(task);
            }
            Err(other) => unreachable!("task switched out to suspend in state {other}"),
        }
    }
}

thread_local! {
    static CURRENT_TASK: Cell<*const Task> = const { Cell::new(ptr::null()) };
    static CURRENT_CARRIER: Cell<(*const Shared, usize)> = const { Cell::new((ptr::null(), usize::MAX)) };
}

// Thread-local accessors stay out of line: a task can resume on a different
// OS thread after any switch, and an inlined access could reuse a TLS address
// computed before the switch.
#[inline(never)]
pub(crate) fn current_task_ptr() -> *const Task {
    CURRENT_TASK.with(|c| c.get())
}

#[inline(never)]
fn set_current_task(task: *const Task) {
    CURRENT_TASK.with(|c| c.set(task));
}

#[inline(never)]
fn current_carrier_raw() -> (*const Shared, usize) {
    CURRENT_CARRIER.with(|c| c.get())
}

#[inline(never)]
fn set_current_carrier(shared: *const Shared, index: usize) {
    CURRENT_CARRIER.with(|c| c.set((shared, index)));
}

/// Carrier index if the calling thread is one of `shared`'s carriers.
fn carrier_of(shared: &Shared) -> Option<usize> {
    let (owner, index) = current_carrier_raw();
    ptr::eq(owner, shared).then_some(index)
}

fn with_current<R>(f: impl FnOnce(&Task) -> R) -> Option<R> {
    let task = current_task_ptr();
    if task.is_null() {
        None
    } else {
        // SAFETY: the carrier keeps an Arc to the running task.
        Some(f(unsafe { &*task }))
    }
}

/// True when called from inside a lightweight task.
pub fn in_task() -> bool {
    !current_task_ptr().is_null()
}

pub fn current_task_id() -> Option<TaskId> {
    with_current(|t| t.id)
}

/// Carrier currently executing the caller. Stable until the next switch point.
pub fn current_carrier() -> Option<CarrierId> {
    if !in_task() {
        return None;
    }
    Some(CarrierId(current_carrier_raw().1))
}

/// Number of carriers of the runtime running the caller.
pub fn carrier_count() -> Option<usize> {
    with_current(|t| t.shared.config.carriers)
}

pub fn stats() -> Option<RuntimeStats> {
    with_current(|t| RuntimeStats {
        spawned: t.shared.spawned.load(Ordering::Relaxed),
        completed: t.shared.completed.load(Ordering::Relaxed),
        live: t.shared.live.load(Ordering::Relaxed),
    })
}

/// Runs `f` with the calling task's private generator, seeded from its
/// [`TaskId`] and the runtime seed. `None` outside a task.
pub fn with_task_rng<R>(f: impl FnOnce(&mut SmallRng) -> R) -> Option<R> {
    // SAFETY: only the running task touches its own generator, and `f`
    // cannot switch while holding the borrow without going through us.
    with_current(|t| f(unsafe { t.rng() }))
}

/// Spawns a task on the caller's runtime.
pub fn spawn<F, T>(body: F) -> Result<JoinHandle<T>, RuntimeError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    let shared = with_current(|t| t.shared.clone()).ok_or(RuntimeError::NotInTask)?;
    if shared.closing.load(Ordering::Acquire) || shared.cancelled.load(Ordering::Acquire) {
        return Err(RuntimeError::ShutDown);
    }
    shared.spawn_task(false, body)
}

/// Requeues the current task and lets the carrier run something else. With
/// nothing else ready the task continues immediately. Outside a task the OS
/// thread yields.
pub fn yield_now() {
    let task = current_task_ptr();
    if task.is_null() {
        thread::yield_now();
        return;
    }
    // SAFETY: see `with_current`.
    unsafe { (*task).switch(Switch::Yield) };
}

/// Suspends the current task after handing its [`ResumeHandle`] to
/// `publish`. The task runs again once the handle is passed to [`resume`],
/// including when that happens before the switch out has completed.
pub fn suspend_current(publish: impl FnOnce(ResumeHandle)) -> Result<(), RuntimeError> {
    try_suspend_current(|handle| {
        publish(handle);
        Ok(())
    })
    .map(|_| ())
}

/// Like [`suspend_current`], but `publish` may decline by giving the handle
/// back, in which case the task does not sleep and `Ok(false)` is returned.
pub fn try_suspend_current(
    publish: impl FnOnce(ResumeHandle) -> Result<(), ResumeHandle>,
) -> Result<bool, RuntimeError> {
    let task_ptr = current_task_ptr();
    if task_ptr.is_null() {
        return Err(RuntimeError::NotInTask);
    }
    // SAFETY: see `with_current`.
    let task = unsafe { &*task_ptr };
    task.state.store(PARKING, Ordering::Release);
    // The registry owns one reference while the handle is outstanding.
    let arc = unsafe {
        Arc::increment_strong_count(task_ptr);
        Arc::from_raw(task_ptr)
    };
    let handle = handle::register(arc);
    if let Err(declined) = publish(handle) {
        if handle::take(declined.into_word()).is_some() {
            task.state.store(RUNNABLE, Ordering::Release);
            return Ok(false);
        }
        // Someone got hold of the handle anyway and already resumed it; the
        // carrier sees NOTIFIED and requeues us.
    }
    task.switch(Switch::Suspend);
    Ok(true)
}

/// Makes a suspended task runnable again and consumes its handle.
pub fn resume(handle: ResumeHandle) -> Result<(), RuntimeError> {
    resume_raw(handle.into_word())
}

/// [`resume`] for a raw word; sentinels and stale handles are rejected.
pub fn resume_raw(word: usize) -> Result<(), RuntimeError> {
    if word <= KEEP_ACTIVE {
        return Err(RuntimeError::InvalidHandle(word));
    }
    let task = handle::take(word).ok_or(RuntimeError::InvalidHandle(word))?;
    loop {
        match task.state.load(Ordering::Acquire) {
            PARKING => {
                if task
                    .state
                    .compare_exchange(PARKING, NOTIFIED, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
                {
                    return Ok(());
                }
            }
            PARKED => {
                task.state.store(RUNNABLE, Ordering::Release);
                let shared = task.shared.clone();
                shared.schedule(task);
                return Ok(());
            }
            other => unreachable!("registered task in state {other}"),
        }
    }
}

/// Switch point used by busy-wait loops: if the runtime has been cancelled the
/// calling task is abandoned and never returns from this call.
pub(crate) fn abandon_if_cancelled() {
    let task = current_task_ptr();
    if task.is_null() {
        return;
    }
    // SAFETY: see `with_current`.
    let task = unsafe { &*task };
    if task.shared.cancelled.load(Ordering::Relaxed) {
        task.switch(Switch::Abandon);
        unreachable!("abandoned task was resumed");
    }
}

fn run_carrier(shared: Arc<Shared>, index: usize) {
    set_current_carrier(Arc::as_ptr(&shared), index);
    let mut rng = SmallRng::seed_from_u64(shared.config.seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let mut idle_rounds = 0u32;
    let mut yield_streak = 0u32;
    loop {
        if shared.cancelled.load(Ordering::Acquire) {
            break;
        }
        match shared.pools.pop(index, &mut rng) {
            Some(task) => {
                idle_rounds = 0;
                if run_task(&shared, task) {
                    yield_streak += 1;
                    // Tasks that only yield can keep this carrier busy
                    // forever. Give the OS a chance to run carriers it
                    // preempted, one of which may host the task they wait on.
                    if yield_streak >= YIELD_STREAK_OS_YIELD {
                        yield_streak = 0;
                        thread::yield_now();
                    }
                } else {
                    yield_streak = 0;
                }
            }
            None => {
                if shared.is_finished() {
                    break;
                }
                idle_rounds += 1;
                if idle_rounds < 16 {
                    thread::yield_now();
                } else {
                    shared.idle_wait();
                }
            }
        }
    }
    set_current_carrier(ptr::null(), usize::MAX);
}

/// Consecutive task yields after which a carrier yields its OS thread.
const YIELD_STREAK_OS_YIELD: u32 = 64;

/// Runs `task` until its next switch. Returns true if it merely yielded.
fn run_task(shared: &Arc<Shared>, task: Arc<Task>) -> bool {
    set_current_task(Arc::as_ptr(&task));
    // SAFETY: the task was just popped from a pool, so this carrier owns it.
    let outcome = unsafe { task.coroutine() }.resume(());
    set_current_task(ptr::null());
    match outcome {
        CoroutineResult::Yield(Switch::Yield) => {
            shared.schedule(task);
            return true;
        }
        CoroutineResult::Yield(Switch::Suspend) => shared.park(task),
        CoroutineResult::Yield(Switch::Abandon) => drop(task),
        CoroutineResult::Return(()) => shared.complete(task),
    }
    false
}

/// Runs `root` on a fresh runtime and returns its result once the root and
/// every task still alive have finished.
pub fn start<F, T>(config: RuntimeConfig, root: F) -> Result<T, RuntimeError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    run(config, None, root)
}

/// Like [`start`], but gives up after `timeout`: the runtime is cancelled,
/// tasks that are still alive are abandoned (leaked, not unwound) and
/// [`RuntimeError::Deadlocked`] is returned.
pub fn start_with_timeout<F, T>(config: RuntimeConfig, timeout: Duration, root: F) -> Result<T, RuntimeError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    run(config, Some(timeout), root)
}

fn run<F, T>(config: RuntimeConfig, timeout: Option<Duration>, root: F) -> Result<T, RuntimeError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    config.validate()?;
    let carriers = config.carriers;
    let shared = Arc::new(Shared::new(config));
    let root = shared.spawn_task(true, root)?;

    let mut threads = Vec::with_capacity(carriers);
    for index in 0..carriers {
        let carrier_shared = shared.clone();
        let spawned = thread::Builder::new()
            .name(format!("carrier-{index}"))
            .spawn(move || run_carrier(carrier_shared, index));
        match spawned {
            Ok(t) => threads.push(t),
            Err(e) => {
                shared.cancelled.store(true, Ordering::Release);
                shared.wake_all();
                return Err(RuntimeError::Resource(e.to_string()));
            }
        }
    }

    if !shared.wait_finished(timeout) {
        shared.cancelled.store(true, Ordering::Release);
        shared.wake_all();
        // Carriers notice the cancellation at their next switch point. One
        // stuck in a loop without switch points is left detached.
        let grace = Instant::now() + Duration::from_secs(2);
        for t in threads {
            while !t.is_finished() && Instant::now() < grace {
                thread::sleep(Duration::from_millis(1));
            }
            if t.is_finished() {
                let _ = t.join();
            }
        }
        return Err(RuntimeError::Deadlocked(timeout.unwrap_or_default()));
    }
    for t in threads {
        t.join()
            .map_err(|_| RuntimeError::Panicked("carrier thread panicked".into()))?;
    }
    root.take_result()
}
