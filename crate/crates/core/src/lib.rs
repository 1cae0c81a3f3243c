//! Mutual exclusion for cooperative lightweight threads.
//!
//! Classical spin locks assume the OS will eventually preempt a waiter so the
//! owner can make progress. Stackful coroutines scheduled cooperatively on a
//! handful of carrier threads give no such guarantee: if the owner yields
//! inside its critical section while waiters spin, the carriers stay busy and
//! the owner never runs again.
//!
//! This crate provides:
//!
//! - [`runtime`]: a small cooperative runtime (carrier threads, ready pools,
//!   `yield_now`, suspend/resume with lost-wakeup-free handles, `join`).
//! - [`backoff`]: the spin → yield → suspend waiting ladder and the lock-free
//!   handshake over a node's resume word.
//! - [`locks`]: TTAS, MCS, the `TTAS-MCS-N` cohort lock and a flag-plus-waitlist
//!   baseline mutex, all built on the ladder.
//! - [`sync`]: a barrier that waits cooperatively.
//! - [`bench`]: the benchmark loop, both workload scenarios, quantiles and CSV.
//! - [`verify`]: mutual exclusion / deadlock oracles and an exhaustive model of
//!   the suspend/resume handshake.
//!
//! ```
//! use std::sync::Arc;
//! use lwlock::locks::{CoopLock, LockNode, McsLock};
//! use lwlock::runtime::{self, RuntimeConfig};
//!
//! let total = runtime::start(RuntimeConfig::with_carriers(2), || {
//!     let lock = Arc::new(McsLock::default());
//!     let counter = Arc::new(std::sync::atomic::AtomicU64::new(0));
//!     let workers: Vec<_> = (0..8)
//!         .map(|_| {
//!             let (lock, counter) = (lock.clone(), counter.clone());
//!             runtime::spawn(move || {
//!                 let mut node = LockNode::new();
//!                 for _ in 0..100 {
//!                     let _guard = lock.acquire(&mut node);
//!                     counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
//!                     runtime::yield_now();
//!                 }
//!             })
//!             .unwrap()
//!         })
//!         .collect();
//!     for w in workers {
//!         w.join().unwrap();
//!     }
//!     counter.load(std::sync::atomic::Ordering::Relaxed)
//! })
//! .unwrap();
//! assert_eq!(total, 800);
//! ```

pub mod backoff;
pub mod bench;
pub mod locks;
pub mod runtime;
pub mod sync;
pub mod verify;

pub use backoff::{BackoffConfig, BackoffPolicy, StrategyMask};
pub use locks::{AnyLock, CoopLock, LockKind, LockNode};
pub use runtime::{RuntimeConfig, RuntimeError};
