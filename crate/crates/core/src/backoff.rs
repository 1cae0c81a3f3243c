//! Spin → yield → suspend waiting.
//!
//! A [`BackoffPolicy`] is created right before a wait loop and
//! [`BackoffPolicy::on_spin_wait`] is called once per failed condition check.
//! The first calls spin for an exponentially growing number of relax
//! instructions, later calls yield to the scheduler and, once enough time has
//! been spent waiting, the task tries to suspend itself.
//!
//! Suspension is coordinated through a [`ResumeWord`]. The waiter CASes
//! [`READY_FOR_SUSPEND`] to its resume handle and only then goes to sleep; the
//! waker exchanges the word with [`KEEP_ACTIVE`] and resumes whatever handle it
//! finds. Whichever side comes second observes the other, so a wakeup is never
//! lost and a waiter never sleeps after its waker has passed.

use std::fmt;
use std::hint;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::runtime::{self, ResumeHandle};

/// Resume word value: the waiter may still publish a handle and sleep.
pub const READY_FOR_SUSPEND: usize = 0;
/// Resume word value: the waker already passed, the waiter must stay awake.
pub const KEEP_ACTIVE: usize = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("yield limit must satisfy 0 < yield_limit <= suspend_limit (got {yield_limit} and {suspend_limit})")]
    Limits { yield_limit: u32, suspend_limit: u32 },
    #[error("spin limit must be at least 1")]
    SpinLimit,
    #[error("unknown strategy code {0:?}, expected three characters like \"SYS\", \"SY*\" or \"*Y*\"")]
    Strategy(String),
}

/// Iteration thresholds of the waiting ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackoffConfig {
    pub yield_limit: u32,
    pub suspend_limit: u32,
    pub spin_limit: u32,
}

impl BackoffConfig {
    pub fn new(yield_limit: u32, suspend_limit: u32, spin_limit: u32) -> Result<Self, ConfigError> {
        let config = Self {
            yield_limit,
            suspend_limit,
            spin_limit,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.yield_limit == 0 || self.yield_limit > self.suspend_limit {
            return Err(ConfigError::Limits {
                yield_limit: self.yield_limit,
                suspend_limit: self.suspend_limit,
            });
        }
        if self.spin_limit == 0 {
            return Err(ConfigError::SpinLimit);
        }
        Ok(())
    }
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self {
            yield_limit: 8,
            suspend_limit: 64,
            spin_limit: 1024,
        }
    }
}

/// Which rungs of the ladder are enabled, written as a three letter code:
/// `S` spin, `Y` yield, `S` suspend, with `*` for a disabled rung.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrategyMask {
    pub spin_enabled: bool,
    pub yield_enabled: bool,
    pub suspend_enabled: bool,
}

impl StrategyMask {
    pub const SYS: Self = Self::new(true, true, true);
    pub const SY_: Self = Self::new(true, true, false);
    pub const S_S: Self = Self::new(true, false, true);
    pub const _Y_: Self = Self::new(false, true, false);
    pub const _YS: Self = Self::new(false, true, true);
    /// Pure spinning. Deadlocks as soon as an owner yields inside its critical
    /// section while all carriers are busy waiting; kept as a negative control.
    pub const S__: Self = Self::new(true, false, false);

    pub const fn new(spin_enabled: bool, yield_enabled: bool, suspend_enabled: bool) -> Self {
        Self {
            spin_enabled,
            yield_enabled,
            suspend_enabled,
        }
    }

    /// True when waiting ever hands the carrier back to the scheduler.
    pub fn is_cooperative(&self) -> bool {
        self.yield_enabled || self.suspend_enabled
    }

    pub fn code(&self) -> String {
        let mut s = String::with_capacity(3);
        s.push(if self.spin_enabled { 'S' } else { '*' });
        s.push(if self.yield_enabled { 'Y' } else { '*' });
        s.push(if self.suspend_enabled { 'S' } else { '*' });
        s
    }
}

impl Default for StrategyMask {
    fn default() -> Self {
        Self::SYS
    }
}

impl fmt::Display for StrategyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for StrategyMask {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ConfigError::Strategy(s.to_owned());
        let b = s.trim().as_bytes();
        if b.len() != 3 {
            return Err(err());
        }
        let flag = |c: u8, on: u8| match c.to_ascii_uppercase() {
            x if x == on => Ok(true),
            b'*' => Ok(false),
            _ => Err(err()),
        };
        let mask = Self::new(flag(b[0], b'S')?, flag(b[1], b'Y')?, flag(b[2], b'S')?);
        if !(mask.spin_enabled || mask.yield_enabled || mask.suspend_enabled) {
            return Err(err());
        }
        Ok(mask)
    }
}

/// Strategy and thresholds used by every wait loop of one lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct WaitSpec {
    pub strategy: StrategyMask,
    pub config: BackoffConfig,
}

impl WaitSpec {
    pub fn new(strategy: StrategyMask, config: BackoffConfig) -> Self {
        Self { strategy, config }
    }
}

/// Per-node word mediating the suspend/resume race: `0` ready for suspend,
/// `1` keep active, anything larger is a published [`ResumeHandle`].
#[derive(Debug, Default)]
pub struct ResumeWord(AtomicUsize);

impl ResumeWord {
    pub const fn new() -> Self {
        Self(AtomicUsize::new(READY_FOR_SUSPEND))
    }

    pub fn load(&self) -> usize {
        self.0.load(Ordering::Acquire)
    }

    /// Re-arms the word for a new wait. Only valid when no waker can still
    /// touch it.
    pub fn reset(&mut self) {
        *self.0.get_mut() = READY_FOR_SUSPEND;
    }

    pub(crate) fn store_ready(&self) {
        self.0.store(READY_FOR_SUSPEND, Ordering::Release);
    }

    /// Waker side, first half: marks the word [`KEEP_ACTIVE`] and returns the
    /// handle of a waiter that already went to sleep, if any. The caller must
    /// hand the returned handle to [`runtime::resume`].
    pub fn disarm(&self) -> Option<ResumeHandle> {
        let prior = self.0.swap(KEEP_ACTIVE, Ordering::AcqRel);
        ResumeHandle::from_word(prior)
    }
}

/// Waiter side of the handshake. Returns `true` if the task actually slept
/// (and has been resumed since), `false` if the word was not
/// [`READY_FOR_SUSPEND`] and the task stayed awake.
///
/// Outside of a lightweight task there is nothing to suspend; the OS thread
/// yields instead and `false` is returned.
pub fn try_suspend(word: &ResumeWord) -> bool {
    if !runtime::in_task() {
        std::thread::yield_now();
        return false;
    }
    if word.0.load(Ordering::Acquire) != READY_FOR_SUSPEND {
        return false;
    }
    runtime::try_suspend_current(|handle| {
        match word
            .0
            .compare_exchange(READY_FOR_SUSPEND, handle.as_word(), Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => Ok(()),
            Err(_) => Err(handle),
        }
    })
    .unwrap_or(false)
}

/// Waker side of the handshake: exchanges the word with [`KEEP_ACTIVE`] and
/// resumes the waiter if it had already published a handle. Returns whether a
/// sleeping waiter was resumed.
pub fn resume_waiter(word: &ResumeWord) -> bool {
    match word.disarm() {
        Some(handle) => {
            runtime::resume(handle).expect("resume word held a consumed handle");
            true
        }
        None => false,
    }
}

/// One rung of the ladder as chosen for a single `on_spin_wait` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Spin(u32),
    Yield,
    Suspend,
}

/// What `on_spin_wait` actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitAction {
    Spin(u32),
    Yield,
    /// A suspension attempt; `suspended` is false when the CAS on the resume
    /// word failed and the task never slept.
    SuspendAttempt {
        suspended: bool,
    },
}

impl WaitAction {
    pub fn stage(&self) -> Stage {
        match *self {
            WaitAction::Spin(n) => Stage::Spin(n),
            WaitAction::Yield => Stage::Yield,
            WaitAction::SuspendAttempt { .. } => Stage::Suspend,
        }
    }
}

/// Picks the rung for the `iterations`-th call.
///
/// The natural ladder is: spin below `yield_limit`, yield below
/// `suspend_limit` (or forever without a node), then suspend. A disabled rung
/// falls through to the next enabled one: without spin the early calls yield,
/// without yield spinning extends up to `suspend_limit`, without suspend the
/// late calls yield (or spin if yield is also off).
pub fn select_stage(iterations: u64, has_node: bool, config: &BackoffConfig, strategy: &StrategyMask) -> Stage {
    let spin = Stage::Spin(spin_ops(iterations, config.spin_limit));
    let can_spin = strategy.spin_enabled;
    let can_yield = strategy.yield_enabled;
    let can_suspend = strategy.suspend_enabled && has_node;

    let order: [(bool, Stage); 3] = if iterations < u64::from(config.yield_limit) {
        [
            (can_spin, spin),
            (can_yield, Stage::Yield),
            (can_suspend, Stage::Suspend),
        ]
    } else if iterations < u64::from(config.suspend_limit) || !has_node {
        [
            (can_yield, Stage::Yield),
            (can_spin, spin),
            (can_suspend, Stage::Suspend),
        ]
    } else {
        [
            (can_suspend, Stage::Suspend),
            (can_yield, Stage::Yield),
            (can_spin, spin),
        ]
    };
    order
        .into_iter()
        .find_map(|(enabled, stage)| enabled.then_some(stage))
        // `**S` without a node: nothing usable, busy-wait.
        .unwrap_or(spin)
}

/// `min(2^iterations, spin_limit)`.
pub fn spin_ops(iterations: u64, spin_limit: u32) -> u32 {
    let burst = u32::try_from(iterations)
        .ok()
        .and_then(|i| 1u64.checked_shl(i))
        .unwrap_or(u64::MAX);
    burst.min(u64::from(spin_limit)) as u32
}

/// Busy-waits for `ops` relax instructions.
pub fn spin(ops: u32) {
    for _ in 0..ops {
        hint::spin_loop();
    }
    runtime::abandon_if_cancelled();
}

/// Waiting state for a single wait loop. Used by exactly one task.
#[derive(Debug)]
pub struct BackoffPolicy<'a> {
    node: Option<&'a ResumeWord>,
    iterations: u64,
    config: BackoffConfig,
    strategy: StrategyMask,
}

impl<'a> BackoffPolicy<'a> {
    /// A policy that never suspends.
    pub fn new(spec: WaitSpec) -> Self {
        Self {
            node: None,
            iterations: 0,
            config: spec.config,
            strategy: spec.strategy,
        }
    }

    /// A policy that may suspend on `node` once the ladder reaches that rung.
    pub fn with_node(node: &'a ResumeWord, spec: WaitSpec) -> Self {
        Self {
            node: Some(node),
            ..Self::new(spec)
        }
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Advances the counter and returns the rung to take, without taking it.
    pub fn next_stage(&mut self) -> Stage {
        self.iterations += 1;
        select_stage(self.iterations, self.node.is_some(), &self.config, &self.strategy)
    }

    pub fn on_spin_wait(&mut self) -> WaitAction {
        match self.next_stage() {
            Stage::Spin(ops) => {
                spin(ops);
                WaitAction::Spin(ops)
            }
            Stage::Yield => {
                runtime::yield_now();
                WaitAction::Yield
            }
            Stage::Suspend => {
                let node = self.node.expect("suspend stage selected without a node");
                WaitAction::SuspendAttempt {
                    suspended: try_suspend(node),
                }
            }
        }
    }
}
