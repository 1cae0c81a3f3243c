use std::any::Any;
use std::cell::{Cell, UnsafeCell};
use std::fmt;
use std::mem;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use corosensei::stack::DefaultStack;
use corosensei::{Coroutine, Yielder};
use rand::rngs::SmallRng;
use rand::SeedableRng;

use super::{RuntimeError, Shared};
use crate::backoff::{BackoffPolicy, ResumeWord, WaitSpec};

/// Unique, never reused identifier of a spawned task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

impl TaskId {
    fn next() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        TaskId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task#{}", self.0)
    }
}

/// Why a task handed control back to its carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Switch {
    Yield,
    Suspend,
    /// The runtime was cancelled; the task is leaked where it stands.
    Abandon,
}

pub(crate) type Coro = Coroutine<(), Switch, (), DefaultStack>;

// Task states. A task is in exactly one place: a ready pool or a carrier
// (RUNNABLE), on its way out of a carrier after publishing a handle
// (PARKING), in the handle registry (PARKED), or PARKING with a resume already
// delivered (NOTIFIED), in which case the carrier requeues it.
pub(crate) const RUNNABLE: u8 = 0;
pub(crate) const PARKING: u8 = 1;
pub(crate) const PARKED: u8 = 2;
pub(crate) const NOTIFIED: u8 = 3;

pub(crate) struct Task {
    pub(crate) id: TaskId,
    pub(crate) shared: Arc<Shared>,
    pub(crate) is_root: bool,
    pub(crate) state: AtomicU8,
    pub(crate) done: AtomicBool,
    /// Suspend/resume word used by the (single) joiner.
    pub(crate) join_word: ResumeWord,
    coroutine: UnsafeCell<Option<Coro>>,
    yielder: Cell<*const Yielder<(), Switch>>,
    rng: UnsafeCell<SmallRng>,
}

// SAFETY: the coroutine, yielder pointer and rng are only touched by the carrier
// currently running the task (or by the task itself on that carrier). The
// state machine above guarantees at most one carrier owns a task at a time,
// and task bodies are `Send`, so migrating the stack between carriers at
// switch points is sound as long as no thread-local borrow is held across a
// switch, which the runtime's own code never does.
unsafe impl Send for Task {}
unsafe impl Sync for Task {}

impl Task {
    /// Coroutine of a task owned by the calling carrier.
    ///
    /// # Safety
    /// The caller must own the task (it was just popped from a pool).
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn coroutine(&self) -> &mut Coro {
        (*self.coroutine.get())
            .as_mut()
            .expect("task coroutine already released")
    }

    /// # Safety
    /// The caller must own the task and the coroutine must have returned.
    pub(crate) unsafe fn take_finished_stack(&self) -> Option<DefaultStack> {
        let coro = (*self.coroutine.get()).take()?;
        Some(coro.into_stack())
    }

    /// Hands control back to the carrier. Must be called from inside this
    /// task's own coroutine.
    pub(crate) fn switch(&self, reason: Switch) {
        let yielder = self.yielder.get();
        assert!(!yielder.is_null(), "switch outside of a running task");
        // SAFETY: the yielder lives on this task's stack for the coroutine's
        // whole lifetime and we are running on that stack.
        unsafe { (*yielder).suspend(reason) };
    }

    /// # Safety
    /// Only the task itself may call this while running.
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn rng(&self) -> &mut SmallRng {
        &mut *self.rng.get()
    }
}

impl Drop for Task {
    fn drop(&mut self) {
        // A coroutine that never finished belongs to a cancelled runtime. Its
        // stack may hold lock guards and other objects whose destructors
        // expect to run inside the runtime, so it is leaked instead of unwound.
        if let Some(coro) = self.coroutine.get_mut().take() {
            if !coro.done() {
                mem::forget(coro);
            }
        }
    }
}

pub(crate) struct JoinSlot<T> {
    result: Mutex<Option<std::thread::Result<T>>>,
}

impl<T> JoinSlot<T> {
    fn take(&self) -> Option<std::thread::Result<T>> {
        self.result.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

/// Owned reference to a spawned task. Joining consumes it, so a task is
/// joined at most once; a second join does not compile:
///
/// ```compile_fail
/// # use lwlock::runtime::{self, RuntimeConfig};
/// runtime::start(RuntimeConfig::default(), || {
///     let child = runtime::spawn(|| ()).unwrap();
///     child.join().unwrap();
///     child.join().unwrap();
/// })
/// .unwrap();
/// ```
pub struct JoinHandle<T> {
    task: Arc<Task>,
    slot: Arc<JoinSlot<T>>,
}

impl<T> fmt::Debug for JoinHandle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JoinHandle")
            .field("id", &self.task.id)
            .field("finished", &self.is_finished())
            .finish()
    }
}

impl<T> JoinHandle<T> {
    pub fn id(&self) -> TaskId {
        self.task.id
    }

    pub fn is_finished(&self) -> bool {
        self.task.done.load(Ordering::Acquire)
    }

    /// Waits for the task to finish and returns its result.
    ///
    /// Inside a task the wait goes through the default spin → yield → suspend
    /// ladder, so the joined task gets to run even on a single carrier.
    /// Outside the runtime the calling OS thread yields until completion.
    pub fn join(self) -> Result<T, RuntimeError> {
        if !self.is_finished() {
            if super::in_task() {
                let mut policy = BackoffPolicy::with_node(&self.task.join_word, WaitSpec::default());
                while !self.is_finished() {
                    policy.on_spin_wait();
                }
            } else {
                while !self.is_finished() {
                    std::thread::yield_now();
                }
            }
        }
        self.take_result()
    }

    pub(crate) fn take_result(&self) -> Result<T, RuntimeError> {
        match self.slot.take() {
            Some(Ok(value)) => Ok(value),
            Some(Err(payload)) => Err(RuntimeError::Panicked(panic_message(payload.as_ref()))),
            None => Err(RuntimeError::NotFinished),
        }
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_owned()
    }
}

pub(crate) fn build<F, T>(
    shared: &Arc<Shared>,
    stack: DefaultStack,
    is_root: bool,
    body: F,
) -> (Arc<Task>, JoinHandle<T>)
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    let id = TaskId::next();
    let slot = Arc::new(JoinSlot {
        result: Mutex::new(None),
    });
    let task = Arc::new(Task {
        id,
        shared: shared.clone(),
        is_root,
        state: AtomicU8::new(RUNNABLE),
        done: AtomicBool::new(false),
        join_word: ResumeWord::new(),
        coroutine: UnsafeCell::new(None),
        yielder: Cell::new(std::ptr::null()),
        rng: UnsafeCell::new(SmallRng::seed_from_u64(
            shared.config.seed ^ id.0.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )),
    });

    let result_slot = slot.clone();
    let coro = Coroutine::with_stack(stack, move |yielder: &Yielder<(), Switch>, ()| {
        let me = super::current_task_ptr();
        // SAFETY: the carrier set the current task before resuming us and
        // keeps its Arc alive while we run.
        unsafe { (*me).yielder.set(yielder as *const _) };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body));
        *result_slot.result.lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
    });
    // SAFETY: nobody else can see the task yet.
    unsafe { *task.coroutine.get() = Some(coro) };

    let handle = JoinHandle {
        task: task.clone(),
        slot,
    };
    (task, handle)
}
