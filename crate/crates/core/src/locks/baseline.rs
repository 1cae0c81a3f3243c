use std::cell::UnsafeCell;
use std::collections::VecDeque;
use std::hint;
use std::sync::atomic::{AtomicBool, Ordering};

use crossbeam_utils::CachePadded;

use super::{CoopLock, LockNode};
use crate::runtime::{self, ResumeHandle};

/// The mutex shape shipped by common lightweight-thread libraries: a flag
/// for the fast path and a spinlock-protected waitlist of suspended tasks.
/// A waiter that misses the flag suspends right away; a release clears the
/// flag and wakes the oldest waiter, which then competes for the flag again.
#[derive(Debug, Default)]
pub struct BaselineMutex {
    flag: CachePadded<AtomicBool>,
    guard: CachePadded<AtomicBool>,
    waitlist: UnsafeCell<VecDeque<ResumeHandle>>,
}

// SAFETY: `waitlist` is only accessed while `guard` is held.
unsafe impl Sync for BaselineMutex {}

impl BaselineMutex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn try_lock(&self) -> bool {
        self.flag
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_ok()
    }

    pub fn is_locked(&self) -> bool {
        self.flag.load(Ordering::Relaxed)
    }

    pub fn waiters(&self) -> usize {
        self.lock_guard();
        // SAFETY: guard held.
        let n = unsafe { (*self.waitlist.get()).len() };
        self.unlock_guard();
        n
    }

    // The guard is only held for a push or a pop and never across a switch
    // point, so plain spinning is enough.
    fn lock_guard(&self) {
        while self
            .guard
            .compare_exchange_weak(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            while self.guard.load(Ordering::Relaxed) {
                hint::spin_loop();
            }
        }
    }

    fn unlock_guard(&self) {
        self.guard.store(false, Ordering::Release);
    }

    pub fn lock_mutex(&self) {
        loop {
            if self.try_lock() {
                return;
            }
            if !runtime::in_task() {
                std::thread::yield_now();
                continue;
            }
            self.lock_guard();
            // Re-check under the guard: a release that cleared the flag before
            // we got here would otherwise find an empty waitlist.
            if self.try_lock() {
                self.unlock_guard();
                return;
            }
            runtime::suspend_current(|handle| {
                // SAFETY: guard held.
                unsafe { (*self.waitlist.get()).push_back(handle) };
                self.unlock_guard();
            })
            .expect("in_task checked above");
        }
    }

    pub fn unlock_mutex(&self) {
        let was_locked = self.flag.swap(false, Ordering::Release);
        debug_assert!(was_locked, "baseline unlock without holding the lock");
        self.lock_guard();
        // SAFETY: guard held.
        let next = unsafe { (*self.waitlist.get()).pop_front() };
        self.unlock_guard();
        if let Some(handle) = next {
            runtime::resume(handle).expect("waitlist held a consumed handle");
        }
    }
}

impl CoopLock for BaselineMutex {
    unsafe fn lock(&self, _node: &LockNode) {
        self.lock_mutex();
    }

    unsafe fn unlock(&self, _node: &LockNode) {
        self.unlock_mutex();
    }

    fn name(&self) -> String {
        "BASELINE".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncontended_leaves_waitlist_alone() {
        let m = BaselineMutex::new();
        m.lock_mutex();
        assert!(m.is_locked());
        assert_eq!(m.waiters(), 0);
        m.unlock_mutex();
        assert!(!m.is_locked());
    }
}
