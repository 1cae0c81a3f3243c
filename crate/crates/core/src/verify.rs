//! Correctness oracles.
//!
//! Live checks drive the real runtime and report exact counts. The handshake
//! check explores a pure-data model of one MCS hand-off instead, because
//! exhaustive enumeration needs a determinism the live scheduler cannot give.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::backoff::{BackoffConfig, BackoffPolicy, ResumeWord, Stage, StrategyMask, WaitAction, WaitSpec};
use crate::bench::scenario::{self, LiveWork};
use crate::locks::{AnyLock, CoopLock, LockKind, LockNode, McsLock, QueueSelection};
use crate::runtime::{self, RuntimeConfig, RuntimeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleReport {
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub verdict: Verdict,
}

impl OracleReport {
    fn new(name: impl Into<String>, expected: impl Into<String>, observed: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            expected: expected.into(),
            observed: observed.into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {}: expected {}, observed {}",
            self.verdict, self.name, self.expected, self.observed
        )
    }
}

/// Upper bound on one mutual-exclusion cell before it counts as hung.
pub const MUTEX_CHECK_TIMEOUT: Duration = Duration::from_secs(120);

/// Tasks yield inside the critical section every this many iterations, so
/// owners are regularly descheduled while holding the lock.
const YIELD_EVERY: u64 = 16;

fn wait_spec(strategy: StrategyMask) -> WaitSpec {
    WaitSpec::new(strategy, BackoffConfig::default())
}

/// Shared-counter and in-critical-section flag check for one lock.
///
/// Each of `tasks` tasks acquires the lock `iterations` times and increments
/// a counter with a separate load and store, yielding between the two every
/// 16th time. Any overlap either loses an increment or trips the flag.
pub fn check_mutual_exclusion(
    lock: LockKind,
    strategy: StrategyMask,
    carriers: usize,
    tasks: usize,
    iterations: u64,
) -> OracleReport {
    let name = format!("mutex {lock} {strategy} carriers={carriers} tasks={tasks} iters={iterations}");
    let made = move || AnyLock::new(lock, wait_spec(strategy), QueueSelection::default());
    check_mutual_exclusion_with(name, made, carriers, tasks, iterations)
}

/// [`check_mutual_exclusion`] for an arbitrary lock, e.g. a test double.
pub fn check_mutual_exclusion_with<L, F>(
    name: String,
    make_lock: F,
    carriers: usize,
    tasks: usize,
    iterations: u64,
) -> OracleReport
where
    L: CoopLock + 'static,
    F: FnOnce() -> L + Send + 'static,
{
    let expected_total = tasks as u64 * iterations;
    let expected = format!("counter={expected_total} overlaps=0");
    let root = move || {
        let lock = Arc::new(make_lock());
        let counter = Arc::new(AtomicU64::new(0));
        let in_cs = Arc::new(AtomicBool::new(false));
        let overlaps = Arc::new(AtomicU64::new(0));
        let workers: Vec<_> = (0..tasks)
            .map(|_| {
                let (lock, counter, in_cs, overlaps) = (lock.clone(), counter.clone(), in_cs.clone(), overlaps.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for i in 0..iterations {
                        node.reset();
                        // SAFETY: fresh node, held until the matching unlock.
                        unsafe { lock.lock(&node) };
                        if in_cs.swap(true, Ordering::AcqRel) {
                            overlaps.fetch_add(1, Ordering::Relaxed);
                        }
                        let v = counter.load(Ordering::Relaxed);
                        if i % YIELD_EVERY == 0 {
                            runtime::yield_now();
                        }
                        counter.store(v + 1, Ordering::Relaxed);
                        in_cs.store(false, Ordering::Release);
                        // SAFETY: acquired above with this node.
                        unsafe { lock.unlock(&node) };
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        for w in workers {
            w.join()?;
        }
        Ok::<_, RuntimeError>((counter.load(Ordering::Relaxed), overlaps.load(Ordering::Relaxed)))
    };
    match runtime::start_with_timeout(RuntimeConfig::with_carriers(carriers), MUTEX_CHECK_TIMEOUT, root) {
        Ok(Ok((total, overlaps))) => OracleReport::new(
            name,
            expected,
            format!("counter={total} overlaps={overlaps}"),
            total == expected_total && overlaps == 0,
        ),
        Ok(Err(e)) | Err(e) => OracleReport::new(name, expected, format!("error: {e}"), false),
    }
}

/// Acquisitions per task in [`check_deadlock_freedom`].
pub const DEADLOCK_CHECK_ITERATIONS: u32 = 3;

/// Runs the parallelizable workload (12 helper tasks spawned and joined while
/// the lock is held) for a few iterations per task. Passes iff every task
/// finishes within `timeout`.
pub fn check_deadlock_freedom(
    lock: LockKind,
    strategy: StrategyMask,
    carriers: usize,
    tasks: usize,
    timeout: Duration,
) -> OracleReport {
    let name = format!("deadlock-free {lock} {strategy} carriers={carriers} tasks={tasks}");
    let root = move || {
        let lock = Arc::new(AnyLock::new(lock, wait_spec(strategy), QueueSelection::default()));
        let workers: Vec<_> = (0..tasks)
            .map(|_| {
                let lock = lock.clone();
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for _ in 0..DEADLOCK_CHECK_ITERATIONS {
                        let guard = lock.acquire(&mut node);
                        scenario::cs_parallelizable(&LiveWork);
                        drop(guard);
                        scenario::parallel_parallelizable_scenario(&LiveWork);
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        for w in workers {
            w.join()?;
        }
        Ok::<_, RuntimeError>(())
    };
    let expected = format!("all {tasks} tasks complete within {timeout:?}");
    match runtime::start_with_timeout(RuntimeConfig::with_carriers(carriers), timeout, root) {
        Ok(Ok(())) => OracleReport::new(name, expected, "completed", true),
        Err(RuntimeError::Deadlocked(_)) => OracleReport::new(name, expected, "timed out", false),
        Ok(Err(e)) | Err(e) => OracleReport::new(name, expected, format!("error: {e}"), false),
    }
}

/// Ladder thresholds of the conformance check.
pub const LADDER_CONFIG: BackoffConfig = BackoffConfig {
    yield_limit: 4,
    suspend_limit: 6,
    spin_limit: 1024,
};

/// The six actions expected from [`LADDER_CONFIG`] with `SYS` and a node.
pub const EXPECTED_LADDER: [Stage; 6] = [
    Stage::Spin(2),
    Stage::Spin(4),
    Stage::Spin(8),
    Stage::Yield,
    Stage::Yield,
    Stage::Suspend,
];

/// Records the first six live `on_spin_wait` actions inside a task. The resume
/// word is preset to keep-active so the suspension attempt is logged without
/// the task going to sleep.
pub fn ladder_action_log() -> Result<Vec<WaitAction>, RuntimeError> {
    runtime::start(RuntimeConfig::with_carriers(1), || {
        let word = ResumeWord::new();
        word.disarm();
        let mut policy = BackoffPolicy::with_node(&word, WaitSpec::new(StrategyMask::SYS, LADDER_CONFIG));
        (0..EXPECTED_LADDER.len()).map(|_| policy.on_spin_wait()).collect()
    })
}

pub fn check_backoff_ladder() -> OracleReport {
    let name = "backoff ladder yield_limit=4 suspend_limit=6 SYS";
    let expected = format!("{EXPECTED_LADDER:?}");
    let word = ResumeWord::new();
    let mut policy = BackoffPolicy::with_node(&word, WaitSpec::new(StrategyMask::SYS, LADDER_CONFIG));
    let planned: Vec<Stage> = (0..EXPECTED_LADDER.len()).map(|_| policy.next_stage()).collect();
    match ladder_action_log() {
        Ok(log) => {
            let live: Vec<Stage> = log.iter().map(WaitAction::stage).collect();
            let ok = planned == EXPECTED_LADDER && live == EXPECTED_LADDER;
            OracleReport::new(name, expected, format!("planned {planned:?}, live {live:?}"), ok)
        }
        Err(e) => OracleReport::new(name, expected, format!("error: {e}"), false),
    }
}

/// Outcome of the three-event enumeration for one ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeOutcome {
    /// The waiter saw keep-active (on its read or its CAS) and never slept.
    StayedAwake,
    /// The waiter slept and the releaser found its handle and resumed it.
    SleptAndResumed,
    /// The waiter slept and nobody will ever resume it.
    LostWakeup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeEvent {
    WaiterRead,
    WaiterCas,
    ReleaserExchange,
}

/// Every ordering of {waiter read, waiter CAS, releaser exchange} that keeps
/// the waiter's program order, with its outcome on an abstract resume word.
pub fn enumerate_handshake() -> Vec<([HandshakeEvent; 3], HandshakeOutcome)> {
    use HandshakeEvent::*;
    const HANDLE: usize = 2;
    let events = [WaiterRead, WaiterCas, ReleaserExchange];
    let mut out = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                if a == b || b == c || a == c {
                    continue;
                }
                let order = [events[a], events[b], events[c]];
                let pos = |e| order.iter().position(|&x| x == e).unwrap();
                if pos(WaiterRead) > pos(WaiterCas) {
                    continue;
                }
                let mut word = 0usize;
                let mut gave_up = false;
                let mut asleep = false;
                let mut resumed = false;
                for e in order {
                    match e {
                        WaiterRead => gave_up = word != 0,
                        WaiterCas if !gave_up => {
                            if word == 0 {
                                word = HANDLE;
                                asleep = true;
                            }
                        }
                        WaiterCas => {}
                        ReleaserExchange => {
                            let prior = std::mem::replace(&mut word, 1);
                            resumed = prior > 1;
                        }
                    }
                }
                let outcome = match (asleep, resumed) {
                    (false, _) => HandshakeOutcome::StayedAwake,
                    (true, true) => HandshakeOutcome::SleptAndResumed,
                    (true, false) => HandshakeOutcome::LostWakeup,
                };
                out.push((order, outcome));
            }
        }
    }
    out
}

/// Order of the releaser's steps in the hand-off model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseOrder {
    /// Exchange the successor's resume word, clear its `locked` flag, then
    /// resume the handle obtained from the exchange. What [`McsLock`] does.
    DisarmFirst,
    /// Clear `locked`, then exchange the resume word and resume.
    ClearFirst,
}

/// Counts over every reachable final state of the hand-off model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HandoffStats {
    pub states: usize,
    pub final_states: usize,
    /// Final states where the waiter sleeps forever.
    pub lost_wakeups: usize,
    /// Final states where the releaser touched the successor's node after the
    /// successor had acquired the lock and was free to reuse or drop it.
    pub node_use_after_handoff: usize,
    /// Final states where a resume hit a task that was not suspending.
    pub spurious_resumes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TaskState {
    Running,
    Parking,
    Parked,
    Notified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum WaiterPc {
    CheckLocked,
    Read,
    Cas,
    Park,
    Asleep,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ReleaseStep {
    Disarm,
    Clear,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ModelState {
    word: u8,
    locked: bool,
    task: TaskState,
    waiter: WaiterPc,
    releaser: u8,
    captured: bool,
    node_released: bool,
    use_after_handoff: bool,
    spurious: bool,
}

const MODEL_HANDLE: u8 = 2;

impl ModelState {
    fn waiter_step(mut self) -> Option<Self> {
        self.waiter = match self.waiter {
            WaiterPc::CheckLocked if !self.locked => {
                self.node_released = true;
                WaiterPc::Done
            }
            WaiterPc::CheckLocked => WaiterPc::Read,
            WaiterPc::Read if self.word != 0 => WaiterPc::CheckLocked,
            WaiterPc::Read => WaiterPc::Cas,
            WaiterPc::Cas if self.word == 0 => {
                self.word = MODEL_HANDLE;
                self.task = TaskState::Parking;
                WaiterPc::Park
            }
            WaiterPc::Cas => WaiterPc::CheckLocked,
            WaiterPc::Park => match self.task {
                TaskState::Parking => {
                    self.task = TaskState::Parked;
                    WaiterPc::Asleep
                }
                TaskState::Notified => {
                    self.task = TaskState::Running;
                    WaiterPc::CheckLocked
                }
                _ => unreachable!("parking from {:?}", self.task),
            },
            WaiterPc::Asleep if self.task == TaskState::Running => WaiterPc::CheckLocked,
            WaiterPc::Asleep | WaiterPc::Done => return None,
        };
        Some(self)
    }

    fn releaser_step(mut self, program: &[ReleaseStep; 3]) -> Option<Self> {
        let step = *program.get(usize::from(self.releaser))?;
        self.releaser += 1;
        match step {
            ReleaseStep::Disarm => {
                self.use_after_handoff |= self.node_released;
                self.captured = std::mem::replace(&mut self.word, 1) == MODEL_HANDLE;
            }
            ReleaseStep::Clear => {
                self.use_after_handoff |= self.node_released;
                self.locked = false;
            }
            // The handle lives in the runtime's registry, not in the node.
            ReleaseStep::Resume if self.captured => match self.task {
                TaskState::Parking => self.task = TaskState::Notified,
                TaskState::Parked => self.task = TaskState::Running,
                _ => self.spurious = true,
            },
            ReleaseStep::Resume => {}
        }
        Some(self)
    }
}

/// Explores every interleaving of one MCS hand-off: a waiter that looped
/// {check locked, read word, CAS word, park} against a releaser running the
/// given step order, including the runtime's parking/notified race.
pub fn explore_handoff(order: ReleaseOrder) -> HandoffStats {
    use ReleaseStep::*;
    let program = match order {
        ReleaseOrder::DisarmFirst => [Disarm, Clear, Resume],
        ReleaseOrder::ClearFirst => [Clear, Disarm, Resume],
    };
    let start = ModelState {
        word: 0,
        locked: true,
        task: TaskState::Running,
        waiter: WaiterPc::CheckLocked,
        releaser: 0,
        captured: false,
        node_released: false,
        use_after_handoff: false,
        spurious: false,
    };
    let mut stats = HandoffStats::default();
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        if !seen.insert(s) {
            continue;
        }
        stats.states += 1;
        let next: Vec<_> = [s.waiter_step(), s.releaser_step(&program)]
            .into_iter()
            .flatten()
            .collect();
        if next.is_empty() {
            stats.final_states += 1;
            stats.lost_wakeups += usize::from(s.waiter != WaiterPc::Done);
            stats.node_use_after_handoff += usize::from(s.use_after_handoff);
            stats.spurious_resumes += usize::from(s.spurious);
        }
        stack.extend(next);
    }
    stats
}

pub fn check_handshake_interleavings() -> OracleReport {
    let orderings = enumerate_handshake();
    let lost = orderings
        .iter()
        .filter(|(_, o)| *o == HandshakeOutcome::LostWakeup)
        .count();
    let model = explore_handoff(ReleaseOrder::DisarmFirst);
    let ok = orderings.len() == 3
        && lost == 0
        && model.lost_wakeups == 0
        && model.node_use_after_handoff == 0
        && model.spurious_resumes == 0;
    OracleReport::new(
        "handshake interleavings",
        "3 orderings, 0 lost wakeups; hand-off model: 0 lost, 0 node use after hand-off, 0 spurious",
        format!(
            "{} orderings, {lost} lost wakeups; hand-off model ({} states): {} lost, {} node use after hand-off, {} spurious",
            orderings.len(),
            model.states,
            model.lost_wakeups,
            model.node_use_after_handoff,
            model.spurious_resumes
        ),
        ok,
    )
}

/// Forces every MCS waiter straight onto the suspend rung
/// (`yield_limit = suspend_limit = 1`) and performs `handoffs` acquisitions
/// across `tasks` tasks, each yielding inside the critical section. Passes iff
/// all complete within `timeout` with the exact count.
pub fn check_handshake_stress(carriers: usize, tasks: usize, handoffs: u64, timeout: Duration) -> OracleReport {
    let name = format!("handshake stress carriers={carriers} tasks={tasks} handoffs={handoffs}");
    let spec = WaitSpec::new(
        StrategyMask::SYS,
        BackoffConfig {
            yield_limit: 1,
            suspend_limit: 1,
            spin_limit: 1024,
        },
    );
    let per_task = handoffs / tasks as u64;
    let total = per_task * tasks as u64;
    let root = move || {
        let lock = Arc::new(McsLock::new(spec));
        let count = Arc::new(AtomicU64::new(0));
        let workers: Vec<_> = (0..tasks)
            .map(|_| {
                let (lock, count) = (lock.clone(), count.clone());
                runtime::spawn(move || {
                    let mut node = LockNode::new();
                    for _ in 0..per_task {
                        let _guard = lock.acquire(&mut node);
                        count.fetch_add(1, Ordering::Relaxed);
                        runtime::yield_now();
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        for w in workers {
            w.join()?;
        }
        Ok::<_, RuntimeError>(count.load(Ordering::Relaxed))
    };
    let expected = format!("{total} acquisitions, no hang within {timeout:?}");
    match runtime::start_with_timeout(RuntimeConfig::with_carriers(carriers), timeout, root) {
        Ok(Ok(n)) => OracleReport::new(name, expected, format!("{n} acquisitions"), n == total),
        Ok(Err(e)) | Err(e) => OracleReport::new(name, expected, format!("error: {e}"), false),
    }
}

/// One line of the verification matrix.
#[derive(Debug, Clone)]
pub struct MatrixRow {
    pub report: OracleReport,
    pub expected_verdict: Verdict,
}

impl MatrixRow {
    pub fn as_expected(&self) -> bool {
        self.report.verdict == self.expected_verdict
    }
}

/// Sizes of the verification matrix.
#[derive(Debug, Clone)]
pub struct MatrixOptions {
    pub carriers: Vec<usize>,
    pub mutex_tasks: usize,
    pub mutex_iterations: u64,
    pub deadlock_timeout: Duration,
    pub stress_handoffs: u64,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            carriers: vec![1, 2, 4],
            mutex_tasks: 16,
            mutex_iterations: 10_000,
            deadlock_timeout: Duration::from_secs(10),
            stress_handoffs: 10_000,
        }
    }
}

/// Locks covered by the matrix.
pub const MATRIX_LOCKS: [LockKind; 5] = [
    LockKind::Ttas,
    LockKind::Mcs,
    LockKind::Cohort { queues: 1 },
    LockKind::Cohort { queues: 4 },
    LockKind::Baseline,
];

/// Cooperative strategies checked for deadlock freedom.
pub const COOPERATIVE_STRATEGIES: [StrategyMask; 5] = [
    StrategyMask::SYS,
    StrategyMask::SY_,
    StrategyMask::S_S,
    StrategyMask::_Y_,
    StrategyMask::_YS,
];

/// Cooperative strategies that stay cooperative on `lock`.
///
/// TTAS has no queue node and the cohort lock's head stage never suspends, so
/// on those locks `S*S` leaves nothing but spinning and is excluded, like
/// `S**`. The baseline ignores the strategy and gets a single entry.
pub fn applicable_strategies(lock: LockKind) -> Vec<StrategyMask> {
    match lock {
        LockKind::Mcs => COOPERATIVE_STRATEGIES.to_vec(),
        LockKind::Baseline => vec![StrategyMask::SYS],
        LockKind::Ttas | LockKind::Cohort { .. } => {
            COOPERATIVE_STRATEGIES.into_iter().filter(|s| s.yield_enabled).collect()
        }
    }
}

/// Runs every check, calling `on_row` as results come in.
pub fn run_matrix(options: &MatrixOptions, mut on_row: impl FnMut(&MatrixRow)) -> Vec<MatrixRow> {
    let mut rows = Vec::new();
    let mut push = |report: OracleReport, expected_verdict: Verdict| {
        let row = MatrixRow {
            report,
            expected_verdict,
        };
        on_row(&row);
        rows.push(row);
    };

    push(check_backoff_ladder(), Verdict::Pass);
    push(check_handshake_interleavings(), Verdict::Pass);
    push(
        check_handshake_stress(2, 4, options.stress_handoffs, Duration::from_secs(60)),
        Verdict::Pass,
    );
    for lock in MATRIX_LOCKS {
        let strategies = if lock.uses_strategy() {
            vec![StrategyMask::SY_, StrategyMask::SYS]
        } else {
            vec![StrategyMask::SYS]
        };
        for strategy in strategies {
            for &carriers in &options.carriers {
                push(
                    check_mutual_exclusion(lock, strategy, carriers, options.mutex_tasks, options.mutex_iterations),
                    Verdict::Pass,
                );
            }
        }
    }
    for lock in MATRIX_LOCKS {
        for strategy in applicable_strategies(lock) {
            for &carriers in &options.carriers {
                push(
                    check_deadlock_freedom(lock, strategy, carriers, 8 * carriers, options.deadlock_timeout),
                    Verdict::Pass,
                );
            }
        }
    }
    push(
        check_deadlock_freedom(LockKind::Mcs, StrategyMask::S__, 1, 2, options.deadlock_timeout),
        Verdict::Fail,
    );
    rows
}
