use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use lwlock::backoff::{BackoffConfig, StrategyMask};
use lwlock::bench::{self, BenchConfig, BenchError, Scenario, SweepConfig};
use lwlock::locks::{LockKind, QueueSelection};
use lwlock::runtime::PoolPolicy;
use lwlock::verify::{self, MatrixOptions};

#[derive(Parser)]
#[command(name = "lwlock", version, about = "Locks for cooperative lightweight threads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark one lock configuration.
    Bench(BenchArgs),
    /// Benchmark over a grid of task counts (and optionally locks/strategies).
    Sweep(SweepArgs),
    /// Run the correctness matrix and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario: cache or parallel.
    #[arg(long, default_value = "cache")]
    scenario: Scenario,
    #[arg(long, default_value_t = 1)]
    carriers: usize,
    /// Seconds per measured repetition.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Seconds of discarded warm-up before the repetitions.
    #[arg(long, default_value_t = 1.0)]
    warmup: f64,
    #[arg(long, default_value_t = 5)]
    reps: u32,
    /// Queue count for TTAS-MCS when the lock name carries none.
    #[arg(long)]
    queues: Option<usize>,
    #[arg(long, default_value_t = 8)]
    yield_limit: u32,
    #[arg(long, default_value_t = 64)]
    suspend_limit: u32,
    #[arg(long, default_value_t = 1024)]
    spin_limit: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ready pool: global or stealing.
    #[arg(long, default_value = "global")]
    pool: PoolPolicy,
    /// Cohort queue selection: carrier or random.
    #[arg(long, default_value = "carrier")]
    selection: QueueSelection,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Append to `--out` instead of overwriting it.
    #[arg(long)]
    append: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// TTAS, MCS, TTAS-MCS-<N> or BASELINE.
    #[arg(long)]
    lock: String,
    /// Three-letter code such as SYS, SY*, *Y*.
    #[arg(long, default_value = "SYS")]
    strategy: StrategyMask,
    #[arg(long, default_value_t = 1)]
    tasks: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma separated lock names.
    #[arg(long, value_delimiter = ',', default_value = "MCS")]
    lock: Vec<String>,
    /// Comma separated strategy codes.
    #[arg(long, value_delimiter = ',', default_value = "SYS")]
    strategy: Vec<StrategyMask>,
    /// Comma separated task counts; defaults to powers of two up to 16 × carriers.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma separated carrier counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    carriers: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    tasks: usize,
    #[arg(long, default_value_t = 10_000)]
    iterations: u64,
    /// Seconds before a deadlock check counts as hung.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    #[arg(long, default_value_t = 10_000)]
    handoffs: u64,
}

fn seconds(s: f64, what: &str) -> Result<Duration, BenchError> {
    Duration::try_from_secs_f64(s).map_err(|_| BenchError::Config(format!("invalid {what} {s}")))
}

fn resolve_lock(name: &str, queues: Option<usize>) -> Result<LockKind, BenchError> {
    let kind: LockKind = name
        .parse()
        .map_err(|e: lwlock::locks::UnknownLock| BenchError::Config(e.to_string()))?;
    match (kind, queues) {
        (LockKind::Cohort { .. }, Some(0)) => Err(BenchError::Config("--queues must be at least 1".into())),
        (LockKind::Cohort { queues: named }, Some(q)) if name.trim().eq_ignore_ascii_case("TTAS-MCS") || named == q => {
            Ok(LockKind::Cohort { queues: q })
        }
        (LockKind::Cohort { queues: named }, Some(q)) => Err(BenchError::Config(format!(
            "lock {name} names {named} queues but --queues is {q}"
        ))),
        (_, _) => Ok(kind),
    }
}

fn base_config(common: &CommonArgs) -> Result<BenchConfig, BenchError> {
    let backoff = BackoffConfig::new(common.yield_limit, common.suspend_limit, common.spin_limit)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(BenchConfig {
        scenario: common.scenario,
        carriers: common.carriers,
        duration: seconds(common.duration, "duration")?,
        warmup: seconds(common.warmup, "warmup")?,
        repetitions: common.reps,
        backoff,
        selection: common.selection,
        pool_policy: common.pool,
        seed: common.seed,
        ..BenchConfig::default()
    })
}

fn print_record(r: &bench::BenchmarkRecord) {
    eprintln!(
        "{} {} {} carriers={} tasks={} rep={} {}: {:.0} acq/s, q50={}ns q95={}ns q99={}ns",
        r.lock,
        r.strategy,
        r.scenario,
        r.carriers,
        r.tasks,
        r.rep,
        r.status,
        r.throughput_per_s,
        r.lat_ns_q50,
        r.lat_ns_q95,
        r.lat_ns_q99
    );
}

fn run_bench(args: BenchArgs) -> Result<(), BenchError> {
    let config = BenchConfig {
        lock: resolve_lock(&args.lock, args.common.queues)?,
        strategy: args.strategy,
        tasks: args.tasks,
        ..base_config(&args.common)?
    };
    let records = bench::run_benchmark(&config)?;
    records.iter().for_each(print_record);
    bench::write_csv(&args.common.out, &records, args.common.append)
}

fn run_sweep(args: SweepArgs) -> Result<(), BenchError> {
    let base = base_config(&args.common)?;
    let locks = args
        .lock
        .iter()
        .map(|l| resolve_lock(l, args.common.queues))
        .collect::<Result<Vec<_>, _>>()?;
    let task_counts = if args.tasks.is_empty() {
        bench::default_task_grid(base.carriers)
    } else {
        args.tasks
    };
    let sweep = SweepConfig {
        base,
        locks,
        strategies: args.strategy,
        task_counts,
    };
    // Rows are written as they come so a long sweep leaves partial results.
    let mut append = args.common.append;
    let mut io_error = None;
    bench::run_sweep(&sweep, |r| {
        print_record(r);
        if io_error.is_none() {
            if let Err(e) = bench::write_csv(&args.common.out, std::slice::from_ref(r), append) {
                io_error = Some(e);
            }
            append = true;
        }
    })?;
    io_error.map_or(Ok(()), Err)
}

fn run_verify(args: VerifyArgs) -> Result<bool, BenchError> {
    let options = MatrixOptions {
        carriers: args.carriers,
        mutex_tasks: args.tasks,
        mutex_iterations: args.iterations,
        deadlock_timeout: seconds(args.timeout, "timeout")?,
        stress_handoffs: args.handoffs,
    };
    println!("{:<10} {:<8} check", "result", "expected");
    let rows = verify::run_matrix(&options, |row| {
        let mark = if row.as_expected() { "ok" } else { "UNEXPECTED" };
        println!("{:<10} {:<8} {}", mark, row.expected_verdict, row.report);
    });
    let bad = rows.iter().filter(|r| !r.as_expected()).count();
    println!("{} checks, {} unexpected", rows.len(), bad);
    Ok(bad == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench(args) => run_bench(args).map(|()| true),
        Command::Sweep(args) => run_sweep(args).map(|()| true),
        Command::Verify(args) => run_verify(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
