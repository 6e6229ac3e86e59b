use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use segrestore::clock::ClockMode;
use segrestore::restore::RestorePolicy;
use segrestore_bench::config::{FailAt, WorkloadConfig, NS_PER_SEC};
use segrestore_bench::metrics::percentile;
use segrestore_bench::verify::{self, Driver};
use segrestore_bench::{csv_out, overhead, sim, threaded};

#[derive(Parser)]
#[command(name = "bench", about = "Instant-restore benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the workload, inject the failure and write CSV metrics.
    Run(RunArgs),
    /// Compare sorted+indexed archiving with plain log copying.
    Overhead(OverheadArgs),
    /// Check restored volumes against the brute-force image and a shadow run.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum PolicyArg {
    Ondemand,
    Preemptive,
    Singlepass,
}

impl From<PolicyArg> for RestorePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Ondemand => RestorePolicy::OnDemandOnly,
            PolicyArg::Preemptive => RestorePolicy::Preemptive,
            PolicyArg::Singlepass => RestorePolicy::SinglePassOnly,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ClockArg {
    /// Deterministic discrete-event simulation.
    Virtual,
    /// Real threads; device delays are slept.
    Wall,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 32_768)]
    pages: u64,
    #[arg(long, default_value_t = 8192)]
    page_size: usize,
    #[arg(long, default_value_t = 128)]
    segment_pages: u64,
    #[arg(long, default_value_t = 8192)]
    pool_pages: usize,
    /// Pages in the working set; defaults to half the volume.
    #[arg(long)]
    hot_pages: Option<u64>,
    /// Contiguous pages filled by consecutive popularity ranks.
    #[arg(long, default_value_t = 128)]
    extent_pages: u64,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 0.8)]
    skew: f64,
    /// Seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Preemptive)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 4096)]
    run_limit: usize,
    #[arg(long, default_value_t = 64)]
    batch_cap: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ClockArg::Virtual)]
    clock: ClockArg,
    /// Simulated processing time per update, microseconds.
    #[arg(long, default_value_t = 250)]
    cpu_us: u64,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> WorkloadConfig {
        WorkloadConfig {
            page_count: self.pages,
            page_size: self.page_size,
            pages_per_segment: self.segment_pages,
            pool_pages: self.pool_pages,
            hot_pages: self.hot_pages.unwrap_or((self.pages / 2).max(1)),
            extent_pages: self.extent_pages,
            workers: self.threads,
            skew: self.skew,
            duration_ns: secs(self.duration),
            policy: self.policy.into(),
            run_size_limit: self.run_limit,
            batch_cap: self.batch_cap,
            seed: self.seed,
            clock: match self.clock {
                ClockArg::Virtual => ClockMode::Virtual,
                ClockArg::Wall => ClockMode::Wall,
            },
            cpu_ns_per_op: self.cpu_us * 1_000,
            ..WorkloadConfig::default()
        }
    }
}

fn secs(s: f64) -> u64 {
    (s * NS_PER_SEC as f64).round() as u64
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Seconds after start; omit the failure with --no-failure.
    #[arg(long, default_value_t = 10.0)]
    fail_at: f64,
    #[arg(long)]
    no_failure: bool,
}

#[derive(Args)]
struct OverheadArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2)]
    rounds: usize,
    /// Throughput window in milliseconds.
    #[arg(long, default_value_t = 100)]
    window_ms: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Transactions per worker.
    #[arg(long, default_value_t = 200)]
    txns: u64,
    /// Fail after this many committed transactions; default half of all.
    #[arg(long)]
    fail_after: Option<u64>,
    /// Instead of the given geometry, check this many randomized configurations.
    #[arg(long)]
    random: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Overhead(a) => run_overhead(a),
        Cmd::Verify(a) => run_verify(a),
    }
}

fn run(a: RunArgs) -> Result<bool> {
    let cfg = WorkloadConfig {
        failure: if a.no_failure {
            FailAt::Never
        } else {
            FailAt::Time(secs(a.fail_at))
        },
        ..a.common.config()
    };
    cfg.validate()?;
    let work = a.common.out.join("work");
    let out = match cfg.clock {
        ClockMode::Virtual => sim::simulate(&cfg, &work),
        ClockMode::Wall => threaded::run_threaded(&cfg, &work),
    }
    .context("benchmark run failed")?;
    csv_out::emit_csv(&out.report, &a.common.out)?;
    let r = &out.report;
    println!("committed transactions: {}", r.committed());
    if let Some(f) = r.failure_ns {
        println!("failure at {:.3} s", f as f64 / NS_PER_SEC as f64);
        let post = r.post_failure_latencies();
        if let (Some(p99), Some(max)) = (percentile(&post, 99.0), post.last()) {
            println!("post-failure latency p99 {:.1} ms, max {:.1} ms", p99 as f64 / 1e6, *max as f64 / 1e6);
        }
    }
    if let Some(rs) = &r.restore {
        match rs.duration_ns() {
            Some(d) => println!(
                "restore finished in {:.3} s ({} batches, {:.1} MB/s)",
                d as f64 / NS_PER_SEC as f64,
                rs.batches.len(),
                rs.overall_bandwidth().unwrap_or(0.0) / 1e6
            ),
            None => println!("restore incomplete: {} of {} bytes", rs.bytes_restored, rs.volume_bytes),
        }
    }
    println!("csv written to {}", a.common.out.display());
    std::fs::remove_dir_all(&work).ok();
    for v in &r.violations {
        eprintln!("invariant violated: {v}");
    }
    Ok(r.is_valid())
}

fn run_overhead(a: OverheadArgs) -> Result<bool> {
    let cfg = WorkloadConfig {
        failure: FailAt::Never,
        ..a.common.config()
    };
    cfg.validate()?;
    let work = a.common.out.join("work");
    let r = overhead::measure_archiving_overhead(&cfg, &work, a.rounds, a.window_ms * 1_000_000)?;
    println!("sorted+indexed median tps: {:.1}", r.sorted_indexed_tps);
    println!("plain copy median tps:     {:.1}", r.plain_copy_tps);
    println!("overhead ratio:            {:.4}", r.ratio);
    std::fs::remove_dir_all(&work).ok();
    Ok(true)
}

fn run_verify(a: VerifyArgs) -> Result<bool> {
    let work = a.common.out.join("verify");
    let driver = match a.common.clock {
        ClockArg::Virtual => Driver::Simulated,
        ClockArg::Wall => Driver::Threaded,
    };
    let configs: Vec<WorkloadConfig> = match a.random {
        Some(n) => {
            let mut rng = rand::rngs::StdRng::seed_from_u64(a.common.seed);
            (0..n as u64).map(|i| verify::random_config(&mut rng, a.common.seed + i)).collect()
        }
        None => {
            let base = a.common.config();
            let total = a.txns * base.workers as u64;
            vec![WorkloadConfig {
                txn_budget: Some(a.txns),
                failure: FailAt::AfterTxns(a.fail_after.unwrap_or(total / 2).max(1)),
                duration_ns: u64::MAX / 2,
                ..base
            }]
        }
    };
    let mut all_ok = true;
    for (i, cfg) in configs.iter().enumerate() {
        if let FailAt::AfterTxns(n) = cfg.failure {
            if n >= cfg.txn_budget.unwrap_or(0) * cfg.workers as u64 {
                bail!("--fail-after must be below the total number of transactions");
            }
        }
        let dir = work.join(format!("cfg{i}"));
        let r = verify::verify(cfg, &dir, driver)?;
        std::fs::remove_dir_all(&dir).ok();
        println!(
            "config {i}: pages={} segment={} policy={:?} committed={} byte_mismatches={} logical_mismatches={} -> {}",
            cfg.page_count,
            cfg.pages_per_segment,
            cfg.policy,
            r.committed,
            r.byte_mismatches.len(),
            r.logical_mismatches.len(),
            if r.passed() { "ok" } else { "FAILED" }
        );
        for v in &r.violations {
            eprintln!("  invariant violated: {v}");
        }
        all_ok &= r.passed();
    }
    Ok(all_ok)
}
