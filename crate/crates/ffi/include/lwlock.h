#ifndef LWLOCK_H
#define LWLOCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Ready pool selection for [`lw_runtime_run`].
 */
typedef enum LwPoolPolicy {
  LW_POOL_POLICY_SINGLE_GLOBAL_FIFO = 0,
  LW_POOL_POLICY_PER_CARRIER_STEALING = 1,
} LwPoolPolicy;

typedef enum LwScenario {
  LW_SCENARIO_CACHE_LINE_INCREMENT = 0,
  LW_SCENARIO_PARALLELIZABLE = 1,
} LwScenario;

/**
 * Result code of every call.
 */
typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_ARGUMENT = 1,
  LW_STATUS_INVALID_ARGUMENT = 2,
  LW_STATUS_NOT_IN_TASK = 3,
  LW_STATUS_SHUT_DOWN = 4,
  LW_STATUS_PANICKED = 5,
  LW_STATUS_DEADLOCKED = 6,
  LW_STATUS_INVALID_HANDLE = 7,
  LW_STATUS_ALREADY_JOINED = 8,
  LW_STATUS_RESOURCE = 9,
  LW_STATUS_INTERNAL = 10,
} LwStatus;

typedef struct LwBarrier LwBarrier;

/**
 * A lock of any kind.
 */
typedef struct LwLock LwLock;

/**
 * Queue node for one acquisition at a time.
 */
typedef struct LwNode LwNode;

/**
 * Handle of a spawned task.
 */
typedef struct LwTask LwTask;

/**
 * Task body or callback: receives the user pointer given alongside it.
 * NULL is rejected with [`LwStatus::NullArgument`].
 */
typedef void (*LwCallback)(void *user);

/**
 * Called with a freshly minted resume handle while the caller is suspending.
 */
typedef void (*LwPublishCallback)(uintptr_t handle, void *user);

/**
 * Ladder thresholds; see [`lw_lock_new`].
 */
typedef struct LwBackoffConfig {
  uint32_t yield_limit;
  uint32_t suspend_limit;
  uint32_t spin_limit;
} LwBackoffConfig;

/**
 * Benchmark parameters; strings as in [`lw_lock_new`].
 */
typedef struct LwBenchConfig {
  const char *lock;
  const char *strategy;
  enum LwScenario scenario;
  uintptr_t carriers;
  uintptr_t tasks;
  double duration_s;
  double warmup_s;
  uint32_t repetitions;
  struct LwBackoffConfig backoff;
  uint64_t seed;
} LwBenchConfig;

/**
 * One repetition's measurements.
 */
typedef struct LwBenchResult {
  uint32_t rep;
  double duration_s;
  uint64_t acquisitions;
  double throughput_per_s;
  uint64_t lat_ns_q50;
  uint64_t lat_ns_q95;
  uint64_t lat_ns_q99;
  bool deadlocked;
} LwBenchResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of `status`.
 */
const char *lw_status_str(enum LwStatus status);

/**
 * Starts a runtime with `carriers` carrier threads, runs `root(user)` as its
 * first task and returns once every task has finished. With a non-zero
 * `timeout_ms` the run is abandoned after that long and
 * [`LwStatus::Deadlocked`] is returned.
 */
enum LwStatus lw_runtime_run(uintptr_t carriers,
                             enum LwPoolPolicy pool,
                             uint64_t timeout_ms,
                             LwCallback root,
                             void *user);

/**
 * Spawns `body(user)` as a new task of the current runtime.
 *
 * # Safety
 * `out` must be valid for writes. `user` must stay valid until the task
 * finishes.
 */
enum LwStatus lw_spawn(LwCallback body, void *user, struct LwTask **out);

/**
 * Waits for the task to finish. A second join on the same handle returns
 * [`LwStatus::AlreadyJoined`]. The handle still has to be freed.
 *
 * # Safety
 * `task` must come from [`lw_spawn`] and not have been freed.
 */
enum LwStatus lw_join(struct LwTask *task);

/**
 * Releases a task handle. An unjoined task keeps running, detached.
 *
 * # Safety
 * `task` must come from [`lw_spawn`] and not have been freed; NULL is ignored.
 */
void lw_task_free(struct LwTask *task);

/**
 * Yields the current task. Outside a task the OS thread yields and
 * [`LwStatus::NotInTask`] is returned.
 */
enum LwStatus lw_yield(void);

/**
 * Index of the carrier running the current task.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum LwStatus lw_current_carrier(uintptr_t *out);

/**
 * Suspends the current task. `publish(handle, user)` runs once the task can
 * no longer miss a wakeup; passing `handle` to [`lw_resume`], from anywhere,
 * makes the task runnable again. The handle is valid for exactly one resume.
 */
enum LwStatus lw_suspend(LwPublishCallback publish, void *user);

/**
 * Resumes a task suspended through [`lw_suspend`]. Sentinel values (0, 1),
 * unknown and already consumed handles give [`LwStatus::InvalidHandle`].
 */
enum LwStatus lw_resume(uintptr_t handle);

/**
 * Default thresholds (8, 64, 1024).
 */
struct LwBackoffConfig lw_backoff_default(void);

/**
 * Creates a lock by name (`TTAS`, `MCS`, `TTAS-MCS-<N>`, `BASELINE`).
 * `strategy` is a three-letter code such as `SYS` or `SY*`; NULL means `SYS`.
 * `backoff` may be NULL for the default thresholds.
 *
 * # Safety
 * `name` and a non-null `strategy` must be NUL-terminated strings; a non-null
 * `backoff` must point to a valid struct.
 */
enum LwStatus lw_lock_new(const char *name,
                          const char *strategy,
                          const struct LwBackoffConfig *backoff,
                          struct LwLock **out);

/**
 * # Safety
 * `lock` must come from [`lw_lock_new`], not be held and not be freed; NULL
 * is ignored.
 */
void lw_lock_free(struct LwLock *lock);

/**
 * Allocates a queue node for one task's acquisitions.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum LwStatus lw_node_new(struct LwNode **out);

/**
 * # Safety
 * `node` must come from [`lw_node_new`], not be in use and not be freed;
 * NULL is ignored.
 */
void lw_node_free(struct LwNode *node);

/**
 * Acquires `lock` using `node`. A node already holding a lock is rejected
 * with [`LwStatus::InvalidArgument`].
 *
 * # Safety
 * Both pointers must be live handles. A node may be used by one task at a
 * time.
 */
enum LwStatus lw_lock_acquire(struct LwLock *lock, struct LwNode *node);

/**
 * Releases `lock`, which must have been acquired through `node`; anything
 * else is rejected with [`LwStatus::InvalidArgument`].
 *
 * # Safety
 * Both pointers must be live handles.
 */
enum LwStatus lw_lock_release(struct LwLock *lock, struct LwNode *node);

/**
 * Creates a barrier for `parties` tasks.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum LwStatus lw_barrier_new(uintptr_t parties, struct LwBarrier **out);

/**
 * Waits for all parties. `is_leader` (optional) is set for exactly one
 * caller per generation.
 *
 * # Safety
 * `barrier` must be a live handle; a non-null `is_leader` must be writable.
 */
enum LwStatus lw_barrier_wait(struct LwBarrier *barrier, bool *is_leader);

/**
 * # Safety
 * `barrier` must come from [`lw_barrier_new`] with no waiters; NULL is
 * ignored.
 */
void lw_barrier_free(struct LwBarrier *barrier);

/**
 * Nearest-rank quantiles: `out[i]` receives the `qs[i]` quantile of
 * `samples`.
 *
 * # Safety
 * `samples` must hold `n` values, `qs` and `out` `nq` values each.
 */
enum LwStatus lw_compute_quantiles(const uint64_t *samples,
                                   uintptr_t n,
                                   const double *qs,
                                   uintptr_t nq,
                                   uint64_t *out);

/**
 * Runs the benchmark and writes one result per repetition into `out`, which
 * must have room for `config->repetitions` entries (`cap`).
 *
 * # Safety
 * `config` must be valid with live strings; `out` must hold `cap` entries.
 */
enum LwStatus lw_bench_run(const struct LwBenchConfig *config,
                           struct LwBenchResult *out,
                           uintptr_t cap,
                           uintptr_t *written);

/**
 * Runs the mutual-exclusion oracle; `passed` receives the verdict.
 *
 * # Safety
 * `lock` must be a NUL-terminated name, `strategy` NULL or a code, `passed`
 * writable.
 */
enum LwStatus lw_verify_mutual_exclusion(const char *lock,
                                         const char *strategy,
                                         uintptr_t carriers,
                                         uintptr_t tasks,
                                         uint64_t iterations,
                                         bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LWLOCK_H */
