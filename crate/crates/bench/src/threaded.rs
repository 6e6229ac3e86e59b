//! Multi-threaded driver: one OS thread per worker plus the archiver, the
//! restore scheduler and a controller that injects the failure and samples
//! counters once per tick.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use segrestore::clock::{self, Clock, ClockMode, WallClock};
use segrestore::restore::{begin_restore, RestoreManager, RestorePolicy};
use segrestore::storage::FixMode;
use segrestore::{Lsn, SegmentId};

use crate::config::{FailAt, WorkloadConfig};
use crate::engine::Engine;
use crate::metrics::{RawRun, TickSnapshot, TxnSample};
use crate::workload::WorkerStream;
use crate::{finish_report, HarnessError, RunOutcome};

const NOT_FAILED: u64 = u64::MAX;

struct Shared {
    engine: Engine,
    start: Instant,
    clock: WallClock,
    stop: AtomicBool,
    committed: AtomicU64,
    failure_ns: AtomicU64,
    failing: AtomicBool,
    mgr: Mutex<Option<Arc<RestoreManager>>>,
}

impl Shared {
    fn now(&self) -> u64 {
        self.clock.now_ns()
    }
}

/// Burns CPU for `ns` so that background work competes with the workload
/// for processor time.
fn spin_for(ns: u64) {
    if ns == 0 {
        return;
    }
    let until = Instant::now() + Duration::from_nanos(ns);
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

fn worker_loop(sh: &Shared, mut stream: WorkerStream, budget: Option<u64>) -> Result<Vec<TxnSample>, HarnessError> {
    let cfg = &sh.engine.config;
    let pool = &sh.engine.pool;
    let spin = cfg.clock == ClockMode::Wall;
    let mut samples = Vec::new();
    while !sh.stop.load(Ordering::Relaxed) && budget.is_none_or(|b| stream.issued() < b) {
        let txn = stream.next_txn();
        let start_ns = sh.now();
        let charged = clock::charged_ns();
        let mut last = Lsn::NULL;
        for op in txn.ops {
            let mut h = pool.fix_page(op.page, FixMode::Exclusive)?;
            let lsn = h.apply_logged(txn.id, op.op);
            pool.unfix_page(h, true);
            last = lsn?;
            if spin {
                spin_for(cfg.cpu_ns_per_op);
            }
        }
        sh.engine.wal.flush(last)?;
        let commit_ns = sh.now();
        let failed_at = sh.failure_ns.load(Ordering::SeqCst);
        samples.push(TxnSample {
            txn_id: txn.id,
            start_ns,
            commit_ns,
            io_ns: clock::charged_ns() - charged,
            post_failure: failed_at != NOT_FAILED && commit_ns > failed_at,
        });
        let committed = sh.committed.fetch_add(1, Ordering::SeqCst) + 1;
        if matches!(cfg.failure, FailAt::AfterTxns(n) if committed >= n) {
            inject_failure(sh)?;
        }
    }
    Ok(samples)
}

fn archiver_loop(sh: &Shared) -> Result<(), HarnessError> {
    let interval = Duration::from_nanos(sh.engine.config.archive_interval_ns);
    while !sh.stop.load(Ordering::Relaxed) {
        {
            let mut a = sh.engine.archiver.lock();
            a.archive_step(usize::MAX)?;
            a.maintain()?;
        }
        thread::sleep(interval);
    }
    Ok(())
}

/// Fails the database device, catches the archive up and starts restore.
/// Only the first call does anything.
fn inject_failure(sh: &Shared) -> Result<(), HarnessError> {
    if sh.failing.swap(true, Ordering::SeqCst) {
        return Ok(());
    }
    let engine = &sh.engine;
    let token = engine.pool.fail_device()?;
    sh.failure_ns.store(sh.now(), Ordering::SeqCst);
    engine.archiver.lock().archive_up_to(token.failure_lsn)?;
    let ctx = engine.restore_context(token.failure_lsn)?;
    let clock: Arc<dyn Clock> = Arc::new(WallClock::starting_at(sh.start));
    *sh.mgr.lock() = Some(begin_restore(&engine.pool, ctx, clock)?);
    Ok(())
}

fn snapshot(sh: &Shared) -> TickSnapshot {
    let status = sh.mgr.lock().as_ref().map(|m| m.restore_status()).unwrap_or_default();
    TickSnapshot {
        at_ns: sh.now(),
        page_reads: sh.engine.data_reads(),
        bytes_restored: status.bytes_restored,
        queue_depth: status.queue_depth as u64,
    }
}

/// Runs the workload on real threads.
pub fn run_threaded(config: &WorkloadConfig, work_dir: &Path) -> Result<RunOutcome, HarnessError> {
    let engine = Engine::build(config, work_dir)?;
    engine.warm_up()?;
    let start = Instant::now();
    let sh = Shared {
        engine,
        start,
        clock: WallClock::starting_at(start),
        stop: AtomicBool::new(false),
        committed: AtomicU64::new(0),
        failure_ns: AtomicU64::new(NOT_FAILED),
        failing: AtomicBool::new(false),
        mgr: Mutex::new(None),
    };
    let cfg = config.clone();

    let (samples, snapshots, end_ns) = thread::scope(|scope| -> Result<_, HarnessError> {
        let workers: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let stream = WorkerStream::new(&cfg, sh.engine.generator.clone(), w as u32);
                let sh = &sh;
                let budget = cfg.txn_budget;
                scope.spawn(move || worker_loop(sh, stream, budget))
            })
            .collect();
        let archiver = scope.spawn(|| archiver_loop(&sh));

        let mut snapshots = Vec::new();
        let mut next_tick = cfg.tick_ns;
        let mut control = || -> Result<(), HarnessError> {
            loop {
                let now = sh.now();
                let all_done = workers.iter().all(|h| h.is_finished());
                if now >= cfg.duration_ns || all_done {
                    return Ok(());
                }
                if matches!(cfg.failure, FailAt::Time(t) if now >= t) {
                    inject_failure(&sh)?;
                }
                if now >= next_tick {
                    snapshots.push(snapshot(&sh));
                    next_tick += cfg.tick_ns;
                }
                thread::sleep(Duration::from_micros(500));
            }
        };
        let controlled = control();
        sh.stop.store(true, Ordering::SeqCst);
        let end_ns = sh.now();

        let mut samples = Vec::new();
        let mut first_err = controlled.err();
        for h in workers {
            match h.join().expect("worker thread panicked") {
                Ok(s) => samples.extend(s),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Err(e) = archiver.join().expect("archiver thread panicked") {
            first_err.get_or_insert(e);
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok((samples, snapshots, end_ns))
    })?;

    let failure_ns = sh.failure_ns.load(Ordering::SeqCst);
    let mgr = sh.mgr.lock().take();
    if let (Some(m), true) = (&mgr, cfg.finish_restore) {
        if m.policy() == RestorePolicy::OnDemandOnly {
            for s in 0..m.geometry().segment_count() {
                m.request_segment(SegmentId(s))?;
            }
        }
        for s in 0..m.geometry().segment_count() {
            m.request_segment(SegmentId(s))?.wait()?;
        }
    }
    if let Some(m) = &mgr {
        m.shutdown();
    }

    let end_ns = if cfg.txn_budget.is_some() {
        samples.iter().map(|s| s.commit_ns).max().unwrap_or(0).max(1)
    } else {
        end_ns.min(cfg.duration_ns).max(1)
    };
    let raw = RawRun {
        tick_ns: cfg.tick_ns,
        end_ns,
        failure_ns: (failure_ns != NOT_FAILED).then_some(failure_ns),
        samples,
        snapshots,
        restore: None,
        archive: crate::archive_summary(&sh.engine),
        violations: Vec::new(),
    };
    finish_report(sh.engine, mgr, raw, cfg.clock == ClockMode::Wall)
}
