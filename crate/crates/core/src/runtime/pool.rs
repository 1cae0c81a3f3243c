use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_deque::{Injector, Steal};
use crossbeam_utils::CachePadded;
use rand::rngs::SmallRng;
use rand::Rng;

use super::task::Task;
use super::PoolPolicy;

/// Ready pools. All queues are FIFO.
pub(crate) enum Pools {
    Global(Box<Injector<Arc<Task>>>),
    PerCarrier {
        queues: Box<[CachePadded<Injector<Arc<Task>>>]>,
        round_robin: AtomicUsize,
    },
}

fn steal_one(queue: &Injector<Arc<Task>>) -> Option<Arc<Task>> {
    loop {
        match queue.steal() {
            Steal::Success(task) => return Some(task),
            Steal::Empty => return None,
            Steal::Retry => {}
        }
    }
}

impl Pools {
    pub(crate) fn new(policy: PoolPolicy, carriers: usize) -> Self {
        match policy {
            PoolPolicy::SingleGlobalFifo => Pools::Global(Box::default()),
            PoolPolicy::PerCarrierStealing => Pools::PerCarrier {
                queues: (0..carriers).map(|_| CachePadded::new(Injector::new())).collect(),
                round_robin: AtomicUsize::new(0),
            },
        }
    }

    /// Enqueues a ready task. `origin` is the carrier doing the push, when the
    /// push happens on one of this runtime's carriers.
    pub(crate) fn push(&self, task: Arc<Task>, origin: Option<usize>) {
        match self {
            Pools::Global(queue) => queue.push(task),
            Pools::PerCarrier { queues, round_robin } => {
                let idx = origin.unwrap_or_else(|| round_robin.fetch_add(1, Ordering::Relaxed)) % queues.len();
                queues[idx].push(task);
            }
        }
    }

    /// Next task for carrier `me`: its own queue first, then a steal starting
    /// at a uniformly random victim.
    pub(crate) fn pop(&self, me: usize, rng: &mut SmallRng) -> Option<Arc<Task>> {
        match self {
            Pools::Global(queue) => steal_one(queue),
            Pools::PerCarrier { queues, .. } => {
                if let Some(task) = steal_one(&queues[me]) {
                    return Some(task);
                }
                let n = queues.len();
                if n == 1 {
                    return None;
                }
                let start = rng.random_range(0..n);
                (0..n)
                    .map(|k| (start + k) % n)
                    .filter(|&victim| victim != me)
                    .find_map(|victim| steal_one(&queues[victim]))
            }
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        match self {
            Pools::Global(queue) => queue.is_empty(),
            Pools::PerCarrier { queues, .. } => queues.iter().all(|q| q.is_empty()),
        }
    }
}
