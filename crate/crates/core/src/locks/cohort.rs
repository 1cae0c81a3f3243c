use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;
use rand::Rng;

use super::{CoopLock, LockNode, McsLock, TtasLock, FAST_PATH};
use crate::backoff::{StrategyMask, WaitSpec};
use crate::runtime;

/// How a thread that missed the fast path picks its MCS queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QueueSelection {
    /// Current carrier index modulo the number of queues.
    #[default]
    CarrierModN,
    /// Uniformly random, from the calling task's private generator.
    Random,
}

impl std::str::FromStr for QueueSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "carrier" | "carrier-mod-n" => Ok(QueueSelection::CarrierModN),
            "random" | "uniform-random" => Ok(QueueSelection::Random),
            _ => Err(format!("unknown queue selection {s:?}, expected carrier or random")),
        }
    }
}

/// `TTAS-MCS-N`: one TTAS flag confers ownership; threads that miss the single
/// fast-path attempt line up in one of `N` MCS queues, and only queue heads
/// race for the flag. Queued waiting may suspend, the head's race for the flag
/// only spins and yields.
#[derive(Debug)]
pub struct CohortLock {
    outer: TtasLock,
    queues: Box<[McsLock]>,
    selection: QueueSelection,
    head_wait: WaitSpec,
    stats: CachePadded<Counters>,
    heads: Box<[CachePadded<AtomicU64>]>,
}

#[derive(Debug, Default)]
struct Counters {
    fast: AtomicU64,
    queued: AtomicU64,
    releases: AtomicU64,
}

/// Acquisition counters. Updated only by the current owner (or, for
/// `head_transitions`, by the current head of each queue), so they cost no
/// extra contention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortStats {
    pub fast_path: u64,
    pub via_queue: u64,
    pub releases: u64,
    pub head_transitions: Vec<u64>,
}

// Single-writer counter bump.
fn bump(counter: &AtomicU64) {
    counter.store(counter.load(Ordering::Relaxed) + 1, Ordering::Relaxed);
}

impl CohortLock {
    pub fn new(queues: usize, selection: QueueSelection, wait: WaitSpec) -> Self {
        assert!(queues >= 1, "a cohort lock needs at least one queue");
        Self {
            outer: TtasLock::new(wait),
            queues: (0..queues).map(|_| McsLock::new(wait)).collect(),
            selection,
            head_wait: WaitSpec {
                strategy: StrategyMask {
                    suspend_enabled: false,
                    ..wait.strategy
                },
                ..wait
            },
            stats: CachePadded::new(Counters::default()),
            heads: (0..queues).map(|_| CachePadded::new(AtomicU64::new(0))).collect(),
        }
    }

    pub fn queue_count(&self) -> usize {
        self.queues.len()
    }

    pub fn selection(&self) -> QueueSelection {
        self.selection
    }

    pub fn is_locked(&self) -> bool {
        self.outer.is_locked()
    }

    pub fn stats(&self) -> CohortStats {
        CohortStats {
            fast_path: self.stats.fast.load(Ordering::Relaxed),
            via_queue: self.stats.queued.load(Ordering::Relaxed),
            releases: self.stats.releases.load(Ordering::Relaxed),
            head_transitions: self.heads.iter().map(|h| h.load(Ordering::Relaxed)).collect(),
        }
    }

    fn select_queue(&self) -> usize {
        let n = self.queues.len();
        if n == 1 {
            return 0;
        }
        match self.selection {
            QueueSelection::CarrierModN => runtime::current_carrier().map_or(0, |c| c.0 % n),
            QueueSelection::Random => {
                runtime::with_task_rng(|rng| rng.random_range(0..n)).unwrap_or_else(|| rand::rng().random_range(0..n))
            }
        }
    }
}

impl CoopLock for CohortLock {
    unsafe fn lock(&self, node: &LockNode) {
        if self.outer.try_lock() {
            node.queue.store(FAST_PATH, Ordering::Relaxed);
            bump(&self.stats.fast);
            return;
        }
        let q = self.select_queue();
        node.queue.store(q, Ordering::Relaxed);
        self.queues[q].lock_node(node);
        bump(&self.heads[q]);
        if !self.outer.try_lock() {
            self.outer.lock_slow(self.head_wait);
        }
        bump(&self.stats.queued);
    }

    unsafe fn unlock(&self, node: &LockNode) {
        bump(&self.stats.releases);
        self.outer.unlock_flag();
        match node.queue.load(Ordering::Relaxed) {
            FAST_PATH => {}
            q => self.queues[q].unlock_node(node),
        }
    }

    fn name(&self) -> String {
        format!("TTAS-MCS-{}", self.queues.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncontended_takes_fast_path() {
        let lock = CohortLock::new(4, QueueSelection::CarrierModN, WaitSpec::default());
        let mut node = LockNode::new();
        {
            let _g = lock.acquire(&mut node);
            assert!(lock.is_locked());
        }
        assert!(!lock.is_locked());
        let stats = lock.stats();
        assert_eq!(stats.fast_path, 1);
        assert_eq!(stats.via_queue, 0);
        assert_eq!(stats.releases, 1);
        assert_eq!(stats.head_transitions, vec![0; 4]);
        assert!(lock.queues.iter().all(|q| !q.is_locked()));
    }
}
