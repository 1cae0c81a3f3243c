//! Critical sections and parallel work of the two benchmark workloads.
//!
//! Both workloads include context switches: the cache-line critical section
//! yields before returning, and the parallelizable one spawns and joins
//! helper tasks while the lock is held. A lock whose waiters monopolize the
//! carriers therefore stalls the owner.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_utils::CachePadded;

use crate::runtime;

/// Blocks of the parallel section in the cache-line workload.
pub const CACHE_PARALLEL_BLOCKS: u32 = 100;
/// Helper tasks spawned by the parallelizable critical section.
pub const PARALLEL_CS_TASKS: u32 = 12;
/// No-ops executed by each helper task.
pub const PARALLEL_CS_NOOPS: u32 = 10_000;
/// Blocks of the parallel section in the parallelizable workload.
pub const PARALLELIZABLE_PARALLEL_BLOCKS: u32 = 10;
/// No-ops per parallel-section block in both workloads.
pub const NOOPS_PER_BLOCK: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Short critical section: increment two cache lines, then yield.
    CacheLineIncrement,
    /// Long critical section: spawn 12 helpers and join them under the lock.
    Parallelizable,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::CacheLineIncrement => "cache",
            Scenario::Parallelizable => "parallel",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cache" | "cache-line-increment" => Ok(Scenario::CacheLineIncrement),
            "parallel" | "parallelizable" => Ok(Scenario::Parallelizable),
            _ => Err(format!("unknown scenario {s:?}, expected cache or parallel")),
        }
    }
}

/// The primitive operations a workload is made of. The live implementation
/// is a zero-sized type; [`CountingWork`] tallies the same calls.
pub trait Work: Clone + Send + Sync + 'static {
    fn noops(&self, n: u32);
    fn yield_now(&self);
}

/// `n` `nop` instructions. Each is one asm block, which the compiler must
/// keep; on targets without a known `nop` mnemonic a spin-loop hint stands in.
#[inline]
pub fn noops(n: u32) {
    for _ in 0..n {
        #[cfg(any(
            target_arch = "x86_64",
            target_arch = "x86",
            target_arch = "aarch64",
            target_arch = "riscv64"
        ))]
        // SAFETY: `nop` has no effects.
        unsafe {
            std::arch::asm!("nop", options(nomem, nostack, preserves_flags))
        };
        #[cfg(not(any(
            target_arch = "x86_64",
            target_arch = "x86",
            target_arch = "aarch64",
            target_arch = "riscv64"
        )))]
        std::hint::spin_loop();
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LiveWork;

impl Work for LiveWork {
    #[inline]
    fn noops(&self, n: u32) {
        noops(n);
    }

    #[inline]
    fn yield_now(&self) {
        runtime::yield_now();
    }
}

/// Counts operations instead of (only) performing them.
#[derive(Debug, Clone, Default)]
pub struct CountingWork {
    inner: Arc<Tally>,
    /// Suppresses yields while still counting the requests.
    pub skip_yields: bool,
}

#[derive(Debug, Default)]
struct Tally {
    noops: AtomicU64,
    yields: AtomicU64,
}

impl CountingWork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn without_yields() -> Self {
        Self {
            skip_yields: true,
            ..Self::default()
        }
    }

    pub fn noop_count(&self) -> u64 {
        self.inner.noops.load(Ordering::Relaxed)
    }

    pub fn yield_count(&self) -> u64 {
        self.inner.yields.load(Ordering::Relaxed)
    }
}

impl Work for CountingWork {
    fn noops(&self, n: u32) {
        self.inner.noops.fetch_add(u64::from(n), Ordering::Relaxed);
        noops(n);
    }

    fn yield_now(&self) {
        self.inner.yields.fetch_add(1, Ordering::Relaxed);
        if !self.skip_yields {
            runtime::yield_now();
        }
    }
}

/// Four integers on their own cache line.
#[derive(Debug, Default)]
pub struct Line {
    pub fields: [AtomicU64; 4],
}

/// Two cache-line aligned records of four integers each. Fields are atomics
/// only so a racing (unlocked) run stays defined behaviour; under the lock
/// they are updated with plain load + store.
#[derive(Debug, Default)]
pub struct SharedData {
    pub lines: [CachePadded<Line>; 2],
}

impl SharedData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> [u64; 8] {
        let mut out = [0; 8];
        for (i, line) in self.lines.iter().enumerate() {
            for (j, f) in line.fields.iter().enumerate() {
                out[i * 4 + j] = f.load(Ordering::Relaxed);
            }
        }
        out
    }
}

/// Increments all eight fields once, then yields. Caller holds the lock.
pub fn cs_cache_line_increment<W: Work>(data: &SharedData, work: &W) {
    for line in data.lines.iter() {
        for f in line.fields.iter() {
            f.store(f.load(Ordering::Relaxed) + 1, Ordering::Relaxed);
        }
    }
    work.yield_now();
}

/// 100 blocks of 1000 no-ops, each followed by a yield.
pub fn parallel_cache_line_scenario<W: Work>(work: &W) {
    for _ in 0..CACHE_PARALLEL_BLOCKS {
        work.noops(NOOPS_PER_BLOCK);
        work.yield_now();
    }
}

/// Spawns 12 helper tasks of 10 000 no-ops each and joins them all before
/// returning. Caller holds the lock.
pub fn cs_parallelizable<W: Work>(work: &W) {
    let helpers: Vec<_> = (0..PARALLEL_CS_TASKS)
        .map(|_| {
            let work = work.clone();
            runtime::spawn(move || work.noops(PARALLEL_CS_NOOPS)).expect("spawn inside critical section")
        })
        .collect();
    for helper in helpers {
        helper.join().expect("helper task panicked");
    }
}

/// 10 blocks of 1000 no-ops, each followed by a yield.
pub fn parallel_parallelizable_scenario<W: Work>(work: &W) {
    for _ in 0..PARALLELIZABLE_PARALLEL_BLOCKS {
        work.noops(NOOPS_PER_BLOCK);
        work.yield_now();
    }
}

impl Scenario {
    pub fn critical_section<W: Work>(&self, data: &SharedData, work: &W) {
        match self {
            Scenario::CacheLineIncrement => cs_cache_line_increment(data, work),
            Scenario::Parallelizable => cs_parallelizable(work),
        }
    }

    pub fn parallel_work<W: Work>(&self, work: &W) {
        match self {
            Scenario::CacheLineIncrement => parallel_cache_line_scenario(work),
            Scenario::Parallelizable => parallel_parallelizable_scenario(work),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_increment_touches_every_field_once() {
        let data = SharedData::new();
        let work = CountingWork::new();
        cs_cache_line_increment(&data, &work);
        assert_eq!(data.snapshot(), [1; 8]);
        assert_eq!(work.yield_count(), 1);
        for _ in 0..9 {
            cs_cache_line_increment(&data, &work);
        }
        assert_eq!(data.snapshot(), [10; 8]);
    }

    #[test]
    fn records_sit_on_distinct_lines() {
        let data = SharedData::new();
        let a = &data.lines[0] as *const _ as usize;
        let b = &data.lines[1] as *const _ as usize;
        assert_eq!(a % 64, 0);
        assert!(b - a >= 64);
    }

    #[test]
    fn parallel_sections_have_the_documented_shape() {
        let work = CountingWork::new();
        parallel_cache_line_scenario(&work);
        assert_eq!(work.noop_count(), 100 * 1000);
        assert_eq!(work.yield_count(), 100);

        let work = CountingWork::new();
        parallel_parallelizable_scenario(&work);
        assert_eq!(work.noop_count(), 10 * 1000);
        assert_eq!(work.yield_count(), 10);
    }
}
