use std::sync::atomic::{AtomicBool, Ordering};

use crossbeam_utils::CachePadded;

use super::{CoopLock, LockNode};
use crate::backoff::{BackoffPolicy, WaitSpec};

/// Test-and-test-and-set lock. Waiters read-spin on the flag and only CAS when
/// it looks free; between attempts they go through the ladder without a node,
/// so they spin and then yield but never suspend.
#[derive(Debug, Default)]
pub struct TtasLock {
    flag: CachePadded<AtomicBool>,
    wait: WaitSpec,
}

impl TtasLock {
    pub fn new(wait: WaitSpec) -> Self {
        Self {
            flag: CachePadded::new(AtomicBool::new(false)),
            wait,
        }
    }

    #[inline]
    pub fn try_lock(&self) -> bool {
        self.flag
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_ok()
    }

    pub fn is_locked(&self) -> bool {
        self.flag.load(Ordering::Relaxed)
    }

    /// Acquires the flag. Returns the number of backoff calls spent waiting.
    pub fn lock_flag(&self) -> u64 {
        if self.try_lock() {
            return 0;
        }
        self.lock_slow(self.wait)
    }

    pub(crate) fn lock_slow(&self, wait: WaitSpec) -> u64 {
        let mut policy = BackoffPolicy::new(wait);
        loop {
            policy.on_spin_wait();
            if !self.flag.load(Ordering::Relaxed) && self.try_lock() {
                return policy.iterations();
            }
        }
    }

    pub fn unlock_flag(&self) {
        let was_locked = self.flag.swap(false, Ordering::Release);
        debug_assert!(was_locked, "TTAS unlock without holding the lock");
    }
}

impl CoopLock for TtasLock {
    unsafe fn lock(&self, _node: &LockNode) {
        self.lock_flag();
    }

    unsafe fn unlock(&self, _node: &LockNode) {
        self.unlock_flag();
    }

    fn name(&self) -> String {
        "TTAS".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncontended_lock_takes_no_backoff() {
        let lock = TtasLock::default();
        assert_eq!(lock.lock_flag(), 0);
        assert!(lock.is_locked());
        lock.unlock_flag();
        assert!(!lock.is_locked());
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "without holding")]
    fn unlock_while_free_asserts() {
        TtasLock::default().unlock_flag();
    }
}
