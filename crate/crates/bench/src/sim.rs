//! Deterministic discrete-event driver on a virtual clock.
//!
//! All actors run on the calling thread. Each action executes at its start
//! time and the simulated device time it charges (see
//! [`segrestore::clock::measure`]) moves the actor's next event forward.
//! Workers that hit a segment that is not restored yet park until the
//! restore batch containing it completes. Devices are not modelled as
//! queues: concurrent actors never delay each other's I/O.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;
use std::sync::Arc;

use segrestore::clock::{self, ManualClock};
use segrestore::restore::{Batch, RestoreError, RestoreManager, RestorePolicy};
use segrestore::storage::{Blocker, Fix, FixMode, SegmentGate};
use segrestore::{Lsn, SegmentId};

use crate::config::{FailAt, WorkloadConfig};
use crate::engine::Engine;
use crate::metrics::{RawRun, TickSnapshot, TxnSample};
use crate::workload::{Txn, WorkerStream};
use crate::{finish_report, HarnessError, RunOutcome};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Tick(u64),
    Fail,
    RestoreStart,
    RestoreDone,
    Restorer,
    Archive,
    Worker(usize),
}

struct Active {
    txn: Txn,
    next: usize,
    start_ns: u64,
    io_ns: u64,
    last_lsn: Lsn,
}

struct Worker {
    stream: WorkerStream,
    txn: Option<Active>,
    committed: u64,
    done: bool,
}

struct InFlight {
    batch: Batch,
    result: Result<u64, RestoreError>,
    started_ns: u64,
}

struct Sim {
    engine: Engine,
    cfg: WorkloadConfig,
    now: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    workers: Vec<Worker>,
    blocked: Vec<(usize, Blocker, u64)>,
    active_workers: usize,
    committed: u64,
    samples: Vec<TxnSample>,
    snapshots: Vec<TickSnapshot>,
    clock: Arc<ManualClock>,
    failure: Option<(u64, Lsn)>,
    fail_scheduled: bool,
    mgr: Option<Arc<RestoreManager>>,
    in_flight: Option<InFlight>,
    restorer_poked: bool,
}

/// Runs the workload in virtual time.
pub fn simulate(config: &WorkloadConfig, work_dir: &Path) -> Result<RunOutcome, HarnessError> {
    let engine = Engine::build(config, work_dir)?;
    engine.warm_up()?;
    let mut sim = Sim::new(engine, config.clone());
    sim.run()?;
    sim.into_outcome()
}

impl Sim {
    fn new(engine: Engine, cfg: WorkloadConfig) -> Sim {
        let workers = (0..cfg.workers)
            .map(|w| Worker {
                stream: WorkerStream::new(&cfg, engine.generator.clone(), w as u32),
                txn: None,
                committed: 0,
                done: false,
            })
            .collect();
        Sim {
            active_workers: cfg.workers,
            engine,
            cfg,
            now: 0,
            seq: 0,
            events: BinaryHeap::new(),
            workers,
            blocked: Vec::new(),
            committed: 0,
            samples: Vec::new(),
            snapshots: Vec::new(),
            clock: Arc::new(ManualClock::new()),
            failure: None,
            fail_scheduled: false,
            mgr: None,
            in_flight: None,
            restorer_poked: false,
        }
    }

    fn at(&mut self, t: u64, ev: Ev) {
        self.seq += 1;
        self.events.push(Reverse((t, self.seq, ev)));
    }

    fn run(&mut self) -> Result<(), HarnessError> {
        for w in 0..self.workers.len() {
            self.at(0, Ev::Worker(w));
        }
        self.at(self.cfg.archive_interval_ns, Ev::Archive);
        self.at(self.cfg.tick_ns, Ev::Tick(1));
        if let FailAt::Time(t) = self.cfg.failure {
            self.fail_scheduled = true;
            self.at(t, Ev::Fail);
        }
        while let Some(Reverse((t, _, ev))) = self.events.pop() {
            self.now = t;
            self.clock.set(t);
            match ev {
                Ev::Worker(w) => self.step_worker(w)?,
                Ev::Archive => self.archive()?,
                Ev::Tick(k) => self.tick(k),
                Ev::Fail => self.fail()?,
                Ev::RestoreStart => self.start_restore()?,
                Ev::Restorer => self.restorer()?,
                Ev::RestoreDone => self.batch_done()?,
            }
        }
        Ok(())
    }

    fn workload_running(&self) -> bool {
        self.active_workers > 0
    }

    fn step_worker(&mut self, w: usize) -> Result<(), HarnessError> {
        let now = self.now;
        let cfg = &self.cfg;
        let worker = &mut self.workers[w];
        if worker.done {
            return Ok(());
        }
        if now >= cfg.duration_ns {
            worker.done = true;
            worker.txn = None;
            return self.worker_finished();
        }
        if worker.txn.is_none() {
            if cfg.txn_budget.is_some_and(|b| worker.committed >= b) {
                worker.done = true;
                return self.worker_finished();
            }
            worker.txn = Some(Active {
                txn: worker.stream.next_txn(),
                next: 0,
                start_ns: now,
                io_ns: 0,
                last_lsn: Lsn::NULL,
            });
        }
        let active = worker.txn.as_mut().expect("active transaction");
        let planned = active.txn.ops[active.next].clone();
        let txn_id = active.txn.id;
        let pool = &self.engine.pool;
        let (outcome, io) = clock::measure(|| -> Result<Result<Lsn, Blocker>, HarnessError> {
            match pool.try_fix(planned.page, FixMode::Exclusive)? {
                Fix::Ready(mut h) => {
                    let lsn = h.apply_logged(txn_id, planned.op)?;
                    pool.unfix_page(h, true);
                    Ok(Ok(lsn))
                }
                Fix::Pending(b) => Ok(Err(b)),
            }
        });
        active.io_ns += io;
        match outcome? {
            Ok(lsn) => {
                active.last_lsn = lsn;
                active.next += 1;
                let mut ready = now + io + cfg.cpu_ns_per_op;
                if active.next == active.txn.ops.len() {
                    let last = active.last_lsn;
                    let (r, flush_io) = clock::measure(|| self.engine.wal.flush(last));
                    r?;
                    active.io_ns += flush_io;
                    ready += flush_io;
                    let post_failure = self.failure.is_some_and(|(f, _)| ready > f);
                    self.samples.push(TxnSample {
                        txn_id,
                        start_ns: active.start_ns,
                        commit_ns: ready,
                        io_ns: active.io_ns,
                        post_failure,
                    });
                    worker.txn = None;
                    worker.committed += 1;
                    self.committed += 1;
                    if let FailAt::AfterTxns(n) = self.cfg.failure {
                        if !self.fail_scheduled && self.committed >= n {
                            self.fail_scheduled = true;
                            self.at(ready, Ev::Fail);
                        }
                    }
                }
                self.at(ready, Ev::Worker(w));
            }
            Err(blocker) => {
                self.blocked.push((w, blocker, now + io));
                if matches!(blocker, Blocker::Segment(_)) {
                    self.poke_restorer(now + io);
                }
            }
        }
        Ok(())
    }

    fn worker_finished(&mut self) -> Result<(), HarnessError> {
        self.active_workers -= 1;
        if self.active_workers == 0 {
            self.drain_remaining()?;
        }
        Ok(())
    }

    /// After the workload ends, makes sure restore runs to completion if
    /// the configuration asks for it.
    fn drain_remaining(&mut self) -> Result<(), HarnessError> {
        if !self.cfg.finish_restore {
            return Ok(());
        }
        let Some(mgr) = self.mgr.clone() else {
            return Ok(());
        };
        if mgr.policy() == RestorePolicy::OnDemandOnly {
            for s in 0..mgr.geometry().segment_count() {
                if !mgr.is_restored(SegmentId(s)) {
                    mgr.request_segment(SegmentId(s))?;
                }
            }
        }
        self.poke_restorer(self.now);
        Ok(())
    }

    fn poke_restorer(&mut self, t: u64) {
        if self.mgr.is_some() && self.in_flight.is_none() && !self.restorer_poked {
            self.restorer_poked = true;
            self.at(t, Ev::Restorer);
        }
    }

    fn restorer(&mut self) -> Result<(), HarnessError> {
        self.restorer_poked = false;
        if self.in_flight.is_some() {
            return Ok(());
        }
        let Some(mgr) = self.mgr.clone() else {
            return Ok(());
        };
        if let Some(batch) = mgr.next_batch() {
            let (result, cost) = clock::measure(|| mgr.execute(&batch));
            self.in_flight = Some(InFlight {
                batch,
                result,
                started_ns: self.now,
            });
            self.at(self.now + cost.max(1), Ev::RestoreDone);
        }
        Ok(())
    }

    fn batch_done(&mut self) -> Result<(), HarnessError> {
        let mgr = self.mgr.clone().expect("restore manager");
        let f = self.in_flight.take().expect("batch in flight");
        mgr.complete(&f.batch, f.result, f.started_ns, self.now);
        let range = f.batch.first.0..f.batch.first.0 + f.batch.count;
        let mut still = Vec::with_capacity(self.blocked.len());
        for (w, b, ready) in std::mem::take(&mut self.blocked) {
            match b {
                // After a failed attempt the retried fix simply parks again.
                Blocker::Segment(s) if range.contains(&s.0) => self.at(self.now.max(ready), Ev::Worker(w)),
                _ => still.push((w, b, ready)),
            }
        }
        self.blocked = still;
        self.poke_restorer(self.now);
        Ok(())
    }

    fn archive(&mut self) -> Result<(), HarnessError> {
        {
            let mut a = self.engine.archiver.lock();
            a.archive_step(usize::MAX)?;
            a.maintain()?;
        }
        if self.workload_running() {
            self.at(self.now + self.cfg.archive_interval_ns, Ev::Archive);
        }
        Ok(())
    }

    fn tick(&mut self, k: u64) {
        let status = self.mgr.as_ref().map(|m| m.restore_status()).unwrap_or_default();
        self.snapshots.push(TickSnapshot {
            at_ns: self.now,
            page_reads: self.engine.data_reads(),
            bytes_restored: status.bytes_restored,
            queue_depth: status.queue_depth as u64,
        });
        let next = (k + 1) * self.cfg.tick_ns;
        if self.workload_running() && next <= self.cfg.duration_ns {
            self.at(next, Ev::Tick(k + 1));
        }
    }

    fn fail(&mut self) -> Result<(), HarnessError> {
        let token = self.engine.pool.fail_device()?;
        self.failure = Some((self.now, token.failure_lsn));
        let (r, cost) = clock::measure(|| self.engine.archiver.lock().archive_up_to(token.failure_lsn));
        r?;
        self.at(self.now + cost, Ev::RestoreStart);
        Ok(())
    }

    fn start_restore(&mut self) -> Result<(), HarnessError> {
        let (_, failure_lsn) = self.failure.expect("failure precedes restore");
        let ctx = self.engine.restore_context(failure_lsn)?;
        let replacement = ctx.replacement.clone();
        let mgr = RestoreManager::new(ctx, self.clock.clone())?;
        self.engine.pool.attach_restore(mgr.clone(), replacement)?;
        self.mgr = Some(mgr);
        let mut still = Vec::with_capacity(self.blocked.len());
        for (w, b, ready) in std::mem::take(&mut self.blocked) {
            if b == Blocker::RestoreNotStarted {
                self.at(self.now.max(ready), Ev::Worker(w));
            } else {
                still.push((w, b, ready));
            }
        }
        self.blocked = still;
        if !self.workload_running() {
            self.drain_remaining()?;
        }
        self.poke_restorer(self.now);
        Ok(())
    }

    fn into_outcome(self) -> Result<RunOutcome, HarnessError> {
        let mut violations = Vec::new();
        if !self.blocked.is_empty() {
            violations.push(format!("{} worker(s) still waiting for restore at the end", self.blocked.len()));
        }
        let end_ns = if self.cfg.txn_budget.is_some() {
            self.samples.iter().map(|s| s.commit_ns).max().unwrap_or(0).max(1)
        } else {
            self.cfg.duration_ns
        };
        let raw = RawRun {
            tick_ns: self.cfg.tick_ns,
            end_ns,
            failure_ns: self.failure.map(|(t, _)| t),
            samples: self.samples,
            snapshots: self.snapshots,
            restore: None,
            archive: crate::archive_summary(&self.engine),
            violations,
        };
        finish_report(self.engine, self.mgr, raw, true)
    }
}
