use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering};

use crossbeam_utils::CachePadded;

use super::{CoopLock, LockNode};
use crate::backoff::{BackoffPolicy, StrategyMask, WaitSpec};
use crate::runtime;

/// MCS queue lock. Each waiter waits on the `locked` flag of its own node
/// with the full ladder, so a long wait ends in suspension on the node's
/// resume word. The release path waits for a half-linked successor without
/// ever suspending.
#[derive(Debug, Default)]
pub struct McsLock {
    tail: CachePadded<AtomicPtr<LockNode>>,
    wait: WaitSpec,
}

impl McsLock {
    pub fn new(wait: WaitSpec) -> Self {
        Self {
            tail: CachePadded::new(AtomicPtr::new(ptr::null_mut())),
            wait,
        }
    }

    pub fn is_locked(&self) -> bool {
        !self.tail.load(Ordering::Relaxed).is_null()
    }

    /// Enqueues `node` and waits until it reaches the head of the queue.
    /// Returns true if the lock was free on arrival.
    ///
    /// # Safety
    /// See [`CoopLock::lock`].
    pub unsafe fn lock_node(&self, node: &LockNode) -> bool {
        let me = node as *const LockNode as *mut LockNode;
        let predecessor = self.tail.swap(me, Ordering::AcqRel);
        if predecessor.is_null() {
            return true;
        }
        node.locked.store(true, Ordering::Relaxed);
        // Publishes `locked = true` together with the link.
        (*predecessor).next.store(me, Ordering::Release);

        let mut policy = BackoffPolicy::with_node(&node.resume, self.wait);
        while node.locked.load(Ordering::Acquire) {
            policy.on_spin_wait();
        }
        false
    }

    /// Passes ownership to the successor of `node`, or empties the queue.
    ///
    /// # Safety
    /// See [`CoopLock::unlock`].
    pub unsafe fn unlock_node(&self, node: &LockNode) {
        let me = node as *const LockNode as *mut LockNode;
        let mut next = node.next.load(Ordering::Acquire);
        if next.is_null() {
            if self
                .tail
                .compare_exchange(me, ptr::null_mut(), Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
            {
                return;
            }
            // A successor swapped the tail but has not linked itself yet. That
            // window is short, so no suspension here.
            let mut policy = BackoffPolicy::new(WaitSpec {
                strategy: StrategyMask {
                    suspend_enabled: false,
                    ..self.wait.strategy
                },
                ..self.wait
            });
            loop {
                next = node.next.load(Ordering::Acquire);
                if !next.is_null() {
                    break;
                }
                policy.on_spin_wait();
            }
        }
        let successor = &*next;
        // Disarm the successor's resume word before clearing its flag: once
        // `locked` is false the successor may return and free its node.
        let sleeping = successor.resume.disarm();
        successor.locked.store(false, Ordering::Release);
        if let Some(handle) = sleeping {
            runtime::resume(handle).expect("successor handle already consumed");
        }
    }
}

impl CoopLock for McsLock {
    unsafe fn lock(&self, node: &LockNode) {
        self.lock_node(node);
    }

    unsafe fn unlock(&self, node: &LockNode) {
        self.unlock_node(node);
    }

    fn name(&self) -> String {
        "MCS".into()
    }
}
