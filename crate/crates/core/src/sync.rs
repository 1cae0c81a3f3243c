//! Synchronization helpers for tasks.

use std::sync::atomic::{AtomicUsize, Ordering};

use crossbeam_utils::CachePadded;

use crate::backoff::{resume_waiter, BackoffPolicy, ResumeWord, WaitSpec};

/// Which arrival released a barrier generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierRole {
    /// The last party to arrive; it released everyone else.
    Leader,
    Follower,
}

/// Reusable barrier for a fixed number of tasks whose waiting goes through
/// the spin → yield → suspend ladder, so a waiting task never holds on to its
/// carrier.
///
/// Every arrival takes a ticket and waits on its own resume word. Words come
/// from two banks used on alternate generations: a bank is only re-armed by
/// the leader of the following generation, by which point every party of the
/// generation that used it has arrived again and thus stopped touching it.
#[derive(Debug)]
pub struct CoopBarrier {
    parties: usize,
    arrived: CachePadded<AtomicUsize>,
    generation: CachePadded<AtomicUsize>,
    banks: [Box<[CachePadded<ResumeWord>]>; 2],
    wait: WaitSpec,
}

impl CoopBarrier {
    pub fn new(parties: usize) -> Self {
        Self::with_wait(parties, WaitSpec::default())
    }

    pub fn with_wait(parties: usize, wait: WaitSpec) -> Self {
        assert!(parties >= 1, "a barrier needs at least one party");
        let bank = || (0..parties).map(|_| CachePadded::new(ResumeWord::new())).collect();
        Self {
            parties,
            arrived: CachePadded::new(AtomicUsize::new(0)),
            generation: CachePadded::new(AtomicUsize::new(0)),
            banks: [bank(), bank()],
            wait,
        }
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn generation(&self) -> usize {
        self.generation.load(Ordering::Acquire)
    }

    /// Blocks until `parties` tasks have called `wait` for the current
    /// generation.
    ///
    /// # Panics
    /// If more than `parties` tasks arrive in one generation.
    pub fn wait(&self) -> BarrierRole {
        // Cannot advance until we arrive, so this is our generation.
        let generation = self.generation.load(Ordering::Acquire);
        let ticket = self.arrived.fetch_add(1, Ordering::AcqRel);
        assert!(
            ticket < self.parties,
            "barrier for {} parties got an extra arrival",
            self.parties
        );
        let bank = &self.banks[generation % 2];

        if ticket + 1 == self.parties {
            for word in self.banks[(generation + 1) % 2].iter() {
                word.store_ready();
            }
            self.arrived.store(0, Ordering::Relaxed);
            self.generation.store(generation.wrapping_add(1), Ordering::Release);
            for word in bank.iter().take(self.parties - 1) {
                resume_waiter(word);
            }
            return BarrierRole::Leader;
        }

        let mut policy = BackoffPolicy::with_node(&bank[ticket], self.wait);
        while self.generation.load(Ordering::Acquire) == generation {
            policy.on_spin_wait();
        }
        BarrierRole::Follower
    }
}
