//! Locks whose waiting goes through the spin → yield → suspend ladder.
//!
//! | lock | waiting on acquire | suspension |
//! |------|--------------------|------------|
//! | [`TtasLock`] | read-spin on one flag | never |
//! | [`McsLock`] | on the caller's own [`LockNode`] | yes, via the node's resume word |
//! | [`CohortLock`] | MCS queue, then the queue head races for a TTAS flag | only while queued |
//! | [`BaselineMutex`] | none: one try, then straight to sleep | always |
//!
//! Every lock takes a caller-provided [`LockNode`] so they share one
//! interface; TTAS and the baseline ignore it. All locks are non-reentrant.

mod baseline;
mod cohort;
mod mcs;
mod ttas;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize};

use thiserror::Error;

pub use baseline::BaselineMutex;
pub use cohort::{CohortLock, CohortStats, QueueSelection};
pub use mcs::McsLock;
pub use ttas::TtasLock;

use crate::backoff::{ResumeWord, WaitSpec};

/// Queue node for one acquisition cycle. Cache-line aligned so that waiters
/// spinning on their own `locked` flag do not share lines.
#[repr(align(128))]
#[derive(Debug, Default)]
pub struct LockNode {
    pub(crate) locked: AtomicBool,
    pub(crate) next: AtomicPtr<LockNode>,
    pub(crate) resume: ResumeWord,
    /// Cohort lock: queue the node went through, or `FAST_PATH`.
    pub(crate) queue: AtomicUsize,
}

pub(crate) const FAST_PATH: usize = usize::MAX;

impl LockNode {
    pub const fn new() -> Self {
        Self {
            locked: AtomicBool::new(false),
            next: AtomicPtr::new(std::ptr::null_mut()),
            resume: ResumeWord::new(),
            queue: AtomicUsize::new(FAST_PATH),
        }
    }

    /// Prepares the node for a new acquisition.
    pub fn reset(&mut self) {
        *self.locked.get_mut() = false;
        *self.next.get_mut() = std::ptr::null_mut();
        self.resume.reset();
        *self.queue.get_mut() = FAST_PATH;
    }

    pub fn resume_word(&self) -> &ResumeWord {
        &self.resume
    }
}

/// Common interface of all locks in this module.
pub trait CoopLock: Send + Sync {
    /// Acquires the lock using `node` as this acquisition's queue node.
    ///
    /// # Safety
    /// `node` must be in its reset state, must not be used by any other
    /// acquisition, and must neither move nor be freed until the matching
    /// [`unlock`](CoopLock::unlock) returns. The caller must not already hold
    /// the lock.
    unsafe fn lock(&self, node: &LockNode);

    /// Releases the lock acquired with `node`.
    ///
    /// # Safety
    /// The caller must hold the lock through this very `node`.
    unsafe fn unlock(&self, node: &LockNode);

    /// Name in the CLI syntax: `TTAS`, `MCS`, `TTAS-MCS-<N>`, `BASELINE`.
    fn name(&self) -> String;

    /// Safe scoped acquisition: the node is reset, borrowed for the guard's
    /// lifetime and released on drop.
    fn acquire<'a>(&'a self, node: &'a mut LockNode) -> LockGuard<'a>
    where
        Self: Sized,
    {
        acquire_dyn(self, node)
    }
}

impl<'l> dyn CoopLock + 'l {
    pub fn acquire<'a>(&'a self, node: &'a mut LockNode) -> LockGuard<'a> {
        acquire_dyn(self, node)
    }
}

fn acquire_dyn<'a>(lock: &'a dyn CoopLock, node: &'a mut LockNode) -> LockGuard<'a> {
    node.reset();
    let node: &'a LockNode = node;
    // SAFETY: the node is reset, exclusively borrowed (so it cannot move or be
    // reused) until the guard drops and runs the matching unlock.
    unsafe { lock.lock(node) };
    LockGuard { lock, node }
}

/// Releases the lock when dropped.
pub struct LockGuard<'a> {
    lock: &'a dyn CoopLock,
    node: &'a LockNode,
}

impl Drop for LockGuard<'_> {
    fn drop(&mut self) {
        // SAFETY: created by a successful lock with this node.
        unsafe { self.lock.unlock(self.node) };
    }
}

impl fmt::Debug for LockGuard<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LockGuard").field("lock", &self.lock.name()).finish()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown lock {0:?}, expected TTAS, MCS, TTAS-MCS-<N> or BASELINE")]
pub struct UnknownLock(pub String);

/// Lock selection by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockKind {
    Ttas,
    Mcs,
    Cohort { queues: usize },
    Baseline,
}

impl LockKind {
    pub fn queues(&self) -> usize {
        match self {
            LockKind::Cohort { queues } => *queues,
            LockKind::Mcs => 1,
            LockKind::Ttas | LockKind::Baseline => 0,
        }
    }

    /// Whether the strategy code affects this lock at all.
    pub fn uses_strategy(&self) -> bool {
        !matches!(self, LockKind::Baseline)
    }
}

impl fmt::Display for LockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockKind::Ttas => f.write_str("TTAS"),
            LockKind::Mcs => f.write_str("MCS"),
            LockKind::Cohort { queues } => write!(f, "TTAS-MCS-{queues}"),
            LockKind::Baseline => f.write_str("BASELINE"),
        }
    }
}

impl FromStr for LockKind {
    type Err = UnknownLock;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "TTAS" => Ok(LockKind::Ttas),
            "MCS" => Ok(LockKind::Mcs),
            "BASELINE" => Ok(LockKind::Baseline),
            "TTAS-MCS" => Ok(LockKind::Cohort { queues: 1 }),
            other => other
                .strip_prefix("TTAS-MCS-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|queues| LockKind::Cohort { queues })
                .ok_or_else(|| UnknownLock(s.to_owned())),
        }
    }
}

/// Any lock of this module, dispatched statically.
#[derive(Debug)]
pub enum AnyLock {
    Ttas(TtasLock),
    Mcs(McsLock),
    Cohort(CohortLock),
    Baseline(BaselineMutex),
}

impl AnyLock {
    pub fn new(kind: LockKind, wait: WaitSpec, selection: QueueSelection) -> Self {
        match kind {
            LockKind::Ttas => AnyLock::Ttas(TtasLock::new(wait)),
            LockKind::Mcs => AnyLock::Mcs(McsLock::new(wait)),
            LockKind::Cohort { queues } => AnyLock::Cohort(CohortLock::new(queues, selection, wait)),
            LockKind::Baseline => AnyLock::Baseline(BaselineMutex::new()),
        }
    }

    pub fn kind(&self) -> LockKind {
        match self {
            AnyLock::Ttas(_) => LockKind::Ttas,
            AnyLock::Mcs(_) => LockKind::Mcs,
            AnyLock::Cohort(c) => LockKind::Cohort {
                queues: c.queue_count(),
            },
            AnyLock::Baseline(_) => LockKind::Baseline,
        }
    }
}

impl CoopLock for AnyLock {
    unsafe fn lock(&self, node: &LockNode) {
        match self {
            AnyLock::Ttas(l) => l.lock(node),
            AnyLock::Mcs(l) => l.lock(node),
            AnyLock::Cohort(l) => l.lock(node),
            AnyLock::Baseline(l) => l.lock(node),
        }
    }

    unsafe fn unlock(&self, node: &LockNode) {
        match self {
            AnyLock::Ttas(l) => l.unlock(node),
            AnyLock::Mcs(l) => l.unlock(node),
            AnyLock::Cohort(l) => l.unlock(node),
            AnyLock::Baseline(l) => l.unlock(node),
        }
    }

    fn name(&self) -> String {
        self.kind().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_names_parse() {
        assert_eq!("TTAS".parse(), Ok(LockKind::Ttas));
        assert_eq!("mcs".parse(), Ok(LockKind::Mcs));
        assert_eq!("TTAS-MCS-8".parse(), Ok(LockKind::Cohort { queues: 8 }));
        assert_eq!("BASELINE".parse(), Ok(LockKind::Baseline));
        assert!("TTAS-MCS-0".parse::<LockKind>().is_err());
        assert!("CLH".parse::<LockKind>().is_err());
        for kind in [
            LockKind::Ttas,
            LockKind::Mcs,
            LockKind::Cohort { queues: 3 },
            LockKind::Baseline,
        ] {
            assert_eq!(kind.to_string().parse(), Ok(kind));
        }
    }

    #[test]
    fn node_is_cache_line_aligned() {
        assert_eq!(std::mem::align_of::<LockNode>() % 64, 0);
        assert!(std::mem::size_of::<LockNode>() >= 64);
    }
}
