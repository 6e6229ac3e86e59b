//! Instant restore.
//!
//! After a media failure the [`RestoreManager`] is attached to the buffer
//! pool. A page miss looks up its segment in the [`SegmentBitmap`]:
//! restored segments are read from the replacement device, others are
//! claimed and queued (or, if another thread already claimed them, waited
//! for). A scheduler restores segments by fetching them from the backup,
//! probing the log archive for the segment's page range, replaying, writing
//! the result to the replacement device and finally marking them restored.

pub mod bitmap;
pub mod replay;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex};

pub use bitmap::{SegmentBitmap, SegmentState};
pub use replay::{apply_record, replay, single_page_repair};

use crate::archive::{ArchiveDir, ArchiveError};
use crate::backup::{BackupError, BackupImage};
use crate::clock::Clock;
use crate::storage::{BufferPool, SegmentGate, StorageError, Volume};
use crate::types::{Geometry, Lsn, PageId, SegmentId};
use crate::wal::WalError;

#[derive(Debug, thiserror::Error)]
pub enum RestoreError {
    #[error("archive covers up to {archived} but the failure happened at {failure}")]
    ArchiveBehind { archived: Lsn, failure: Lsn },

    #[error("database device has not failed")]
    NotFailed,

    #[error("invalid {0}")]
    InvalidSegment(SegmentId),

    #[error("replacement and backup geometries differ")]
    GeometryMismatch,

    #[error("restore of {0} failed permanently")]
    SegmentFailed(SegmentId),

    #[error("restore was shut down")]
    Shutdown,

    #[error(transparent)]
    Backup(#[from] BackupError),

    #[error(transparent)]
    Archive(#[from] ArchiveError),

    #[error(transparent)]
    Storage(#[from] StorageError),

    #[error(transparent)]
    Wal(#[from] WalError),
}

impl From<RestoreError> for StorageError {
    fn from(e: RestoreError) -> Self {
        match e {
            RestoreError::Storage(e) => e,
            RestoreError::InvalidSegment(s) => StorageError::InvalidSegment(s),
            RestoreError::SegmentFailed(segment) => StorageError::RestoreFailed {
                segment,
                reason: "retries exhausted".into(),
            },
            other => StorageError::RestoreFailed {
                segment: SegmentId(u64::MAX),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum RestorePolicy {
    /// Restore only requested segments, first come first served.
    OnDemandOnly,
    /// Serve requests first; while none are queued, sweep ahead in
    /// contiguous batches that double in size up to the cap.
    Preemptive,
    /// One sequential sweep in cap-sized batches; requests only wait.
    SinglePassOnly,
}

#[derive(Copy, Clone, Debug)]
pub struct RestoreConfig {
    pub policy: RestorePolicy,
    /// Largest batch, in segments.
    pub batch_cap: u64,
    /// Scheduler threads started by [`begin_restore`].
    pub workers: usize,
    /// Attempts per segment before its waiters get an error.
    pub max_attempts: u32,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        RestoreConfig {
            policy: RestorePolicy::Preemptive,
            batch_cap: 64,
            workers: 1,
            max_attempts: 3,
        }
    }
}

pub struct RestoreContext {
    pub backup: BackupImage,
    pub archive: Arc<ArchiveDir>,
    pub replacement: Volume,
    pub failure_lsn: Lsn,
    pub config: RestoreConfig,
}

/// Contiguous segments restored together.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub first: SegmentId,
    pub count: u64,
    /// Served from the request queue.
    pub demand: bool,
}

impl Batch {
    pub fn segments(&self) -> impl Iterator<Item = SegmentId> {
        let first = self.first.0;
        (first..first + self.count).map(SegmentId)
    }
}

/// Timing of one completed batch.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BatchEvent {
    pub batch: Batch,
    pub bytes: u64,
    pub started_ns: u64,
    pub finished_ns: u64,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct RestoreStatus {
    pub restored_count: u64,
    pub total: u64,
    pub bytes_restored: u64,
    pub queue_depth: usize,
}

struct Sched {
    queue: VecDeque<SegmentId>,
    sweep: u64,
    next_batch: u64,
}

struct Shared {
    backup: BackupImage,
    archive: Arc<ArchiveDir>,
    replacement: Volume,
    failure_lsn: Lsn,
    config: RestoreConfig,
    geometry: Geometry,
    bitmap: SegmentBitmap,
    sched: Mutex<Sched>,
    sched_cv: Condvar,
    progress: Mutex<()>,
    progress_cv: Condvar,
    successes: Box<[AtomicU32]>,
    attempts: Box<[AtomicU32]>,
    failed: Box<[AtomicBool]>,
    bytes_restored: AtomicU64,
    events: Mutex<Vec<BatchEvent>>,
    clock: Arc<dyn Clock>,
    started_ns: u64,
    finished_ns: AtomicU64,
    shutdown: AtomicBool,
}

/// Handle returned by [`RestoreManager::request_segment`].
pub struct SegmentTicket {
    shared: Arc<Shared>,
    segment: SegmentId,
}

impl SegmentTicket {
    pub fn segment(&self) -> SegmentId {
        self.segment
    }

    pub fn is_done(&self) -> bool {
        self.shared.bitmap.is_restored(self.segment)
    }

    /// Blocks until the segment is restored.
    pub fn wait(&self) -> Result<(), RestoreError> {
        self.shared.wait(self.segment)
    }
}

impl Shared {
    fn wait(&self, s: SegmentId) -> Result<(), RestoreError> {
        let mut g = self.progress.lock();
        loop {
            if self.bitmap.is_restored(s) {
                return Ok(());
            }
            if self.failed[s.0 as usize].load(Ordering::SeqCst) {
                return Err(RestoreError::SegmentFailed(s));
            }
            if self.shutdown.load(Ordering::SeqCst) {
                return Err(RestoreError::Shutdown);
            }
            self.progress_cv.wait(&mut g);
        }
    }

    fn notify_progress(&self) {
        let _g = self.progress.lock();
        self.progress_cv.notify_all();
    }

    /// Claims up to `max` contiguous segments starting with the first
    /// not-restored one at or after `from`.
    fn claim_run(&self, from: u64, max: u64) -> Option<Batch> {
        loop {
            let first = self.bitmap.next_not_restored(from)?;
            if !self.bitmap.try_claim(first) {
                continue;
            }
            let mut count = 1;
            while count < max
                && first.0 + count < self.bitmap.len()
                && self.bitmap.try_claim(SegmentId(first.0 + count))
            {
                count += 1;
            }
            return Some(Batch {
                first,
                count,
                demand: false,
            });
        }
    }
}

pub struct RestoreManager {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl std::fmt::Debug for RestoreManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RestoreManager")
            .field("status", &self.restore_status())
            .finish()
    }
}

impl RestoreManager {
    /// Builds a manager without starting any scheduler thread; the caller
    /// drives [`next_batch`](Self::next_batch), [`execute`](Self::execute)
    /// and [`complete`](Self::complete).
    pub fn new(ctx: RestoreContext, clock: Arc<dyn Clock>) -> Result<Arc<RestoreManager>, RestoreError> {
        let archived = ctx.archive.archived_upto();
        if archived < ctx.failure_lsn {
            return Err(RestoreError::ArchiveBehind {
                archived,
                failure: ctx.failure_lsn,
            });
        }
        let geometry = ctx.backup.geometry();
        if ctx.replacement.geometry() != geometry {
            return Err(RestoreError::GeometryMismatch);
        }
        assert!(ctx.config.batch_cap > 0, "batch cap must be positive");
        let n = geometry.segment_count();
        let started_ns = clock.now_ns();
        Ok(Arc::new(RestoreManager {
            shared: Arc::new(Shared {
                backup: ctx.backup,
                archive: ctx.archive,
                replacement: ctx.replacement,
                failure_lsn: ctx.failure_lsn,
                config: ctx.config,
                geometry,
                bitmap: SegmentBitmap::new(n),
                sched: Mutex::new(Sched {
                    queue: VecDeque::new(),
                    sweep: 0,
                    next_batch: 1,
                }),
                sched_cv: Condvar::new(),
                progress: Mutex::new(()),
                progress_cv: Condvar::new(),
                successes: (0..n).map(|_| AtomicU32::new(0)).collect(),
                attempts: (0..n).map(|_| AtomicU32::new(0)).collect(),
                failed: (0..n).map(|_| AtomicBool::new(false)).collect(),
                bytes_restored: AtomicU64::new(0),
                events: Mutex::new(Vec::new()),
                clock,
                started_ns,
                finished_ns: AtomicU64::new(u64::MAX),
                shutdown: AtomicBool::new(false),
            }),
            workers: Mutex::new(Vec::new()),
        }))
    }

    /// Starts `config.workers` scheduler threads.
    pub fn spawn_workers(&self) {
        let mut workers = self.workers.lock();
        for i in 0..self.shared.config.workers.max(1) {
            let mgr = RestoreManager {
                shared: self.shared.clone(),
                workers: Mutex::new(Vec::new()),
            };
            let h = std::thread::Builder::new()
                .name(format!("restore-{i}"))
                .spawn(move || mgr.scheduler_loop())
                .expect("spawn restore worker");
            workers.push(h);
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.shared.geometry
    }

    pub fn policy(&self) -> RestorePolicy {
        self.shared.config.policy
    }

    pub fn failure_lsn(&self) -> Lsn {
        self.shared.failure_lsn
    }

    pub fn bitmap(&self) -> &SegmentBitmap {
        &self.shared.bitmap
    }

    pub fn replacement(&self) -> &Volume {
        &self.shared.replacement
    }

    pub fn is_complete(&self) -> bool {
        self.shared.bitmap.is_complete()
    }

    pub fn started_ns(&self) -> u64 {
        self.shared.started_ns
    }

    /// Clock time the last segment was restored, if it has been.
    pub fn finished_ns(&self) -> Option<u64> {
        let t = self.shared.finished_ns.load(Ordering::SeqCst);
        (t != u64::MAX).then_some(t)
    }

    fn check_segment(&self, s: SegmentId) -> Result<(), RestoreError> {
        if s.0 >= self.shared.bitmap.len() {
            return Err(RestoreError::InvalidSegment(s));
        }
        Ok(())
    }

    /// Makes sure `segment` gets restored. The first caller to see it
    /// not restored enqueues it; everyone gets a ticket to wait on.
    pub fn request_segment(&self, segment: SegmentId) -> Result<SegmentTicket, RestoreError> {
        self.check_segment(segment)?;
        let sh = &self.shared;
        if sh.config.policy != RestorePolicy::SinglePassOnly && sh.bitmap.try_claim(segment) {
            sh.sched.lock().queue.push_back(segment);
            sh.sched_cv.notify_all();
        }
        Ok(SegmentTicket {
            shared: sh.clone(),
            segment,
        })
    }

    /// Picks and claims the next batch, if there is work that is not
    /// already claimed. Never blocks.
    pub fn next_batch(&self) -> Option<Batch> {
        let sh = &self.shared;
        let mut s = sh.sched.lock();
        match sh.config.policy {
            RestorePolicy::OnDemandOnly => s.queue.pop_front().map(|first| Batch {
                first,
                count: 1,
                demand: true,
            }),
            RestorePolicy::Preemptive => {
                if let Some(first) = s.queue.pop_front() {
                    s.next_batch = 1;
                    return Some(Batch {
                        first,
                        count: 1,
                        demand: true,
                    });
                }
                let batch = sh.claim_run(s.sweep, s.next_batch)?;
                s.sweep = batch.first.0 + batch.count;
                s.next_batch = (s.next_batch * 2).min(sh.config.batch_cap);
                Some(batch)
            }
            RestorePolicy::SinglePassOnly => {
                if let Some(first) = s.queue.pop_front() {
                    // Only retries of failed sweep batches are queued.
                    return Some(Batch {
                        first,
                        count: 1,
                        demand: false,
                    });
                }
                let batch = sh.claim_run(s.sweep, sh.config.batch_cap)?;
                s.sweep = batch.first.0 + batch.count;
                Some(batch)
            }
        }
    }

    /// Restores a claimed batch onto the replacement device: one backup
    /// read, one archive probe, replay, one write. Publishes nothing.
    pub fn execute(&self, batch: &Batch) -> Result<u64, RestoreError> {
        let sh = &self.shared;
        let range = sh.geometry.segment_pages(batch.first, batch.count);
        let mut pages = sh.backup.fetch_segments(batch.first, batch.count)?;
        let stream = sh.archive.probe(
            PageId(range.start),
            PageId(range.end - 1),
            sh.backup.min_lsn(),
        )?;
        for rec in stream {
            let page = &mut pages[(rec.page_id.0 - range.start) as usize];
            apply_record(page, &rec);
        }
        sh.replacement.write_pages(PageId(range.start), &pages)?;
        sh.replacement.device().sync()?;
        Ok((range.end - range.start) * sh.geometry.page_size as u64)
    }

    /// Publishes the outcome of [`execute`](Self::execute): marks the
    /// segments restored and wakes their waiters, or reverts and requeues
    /// them.
    pub fn complete(&self, batch: &Batch, result: Result<u64, RestoreError>, started_ns: u64, finished_ns: u64) {
        let sh = &self.shared;
        match result {
            Ok(bytes) => {
                for s in batch.segments() {
                    sh.successes[s.0 as usize].fetch_add(1, Ordering::SeqCst);
                    sh.bitmap.mark_restored(s);
                }
                sh.bytes_restored.fetch_add(bytes, Ordering::SeqCst);
                sh.events.lock().push(BatchEvent {
                    batch: *batch,
                    bytes,
                    started_ns,
                    finished_ns,
                });
                if sh.bitmap.is_complete() {
                    sh.finished_ns.store(finished_ns, Ordering::SeqCst);
                }
            }
            Err(e) => {
                log::warn!("restore of {} segment(s) from {} failed: {e}", batch.count, batch.first);
                let mut s = sh.sched.lock();
                for seg in batch.segments() {
                    let tries = sh.attempts[seg.0 as usize].fetch_add(1, Ordering::SeqCst) + 1;
                    sh.bitmap.revert(seg);
                    if tries < sh.config.max_attempts {
                        if sh.bitmap.try_claim(seg) {
                            s.queue.push_front(seg);
                        }
                    } else {
                        sh.failed[seg.0 as usize].store(true, Ordering::SeqCst);
                    }
                }
                sh.sched_cv.notify_all();
            }
        }
        sh.notify_progress();
    }

    /// Runs one batch end to end with clock timestamps. Returns false if
    /// no batch was available.
    pub fn run_one(&self) -> bool {
        let Some(batch) = self.next_batch() else {
            return false;
        };
        let t0 = self.shared.clock.now_ns();
        let r = self.execute(&batch);
        let t1 = self.shared.clock.now_ns();
        self.complete(&batch, r, t0, t1);
        true
    }

    fn all_settled(&self) -> bool {
        let sh = &self.shared;
        sh.bitmap.is_complete()
            || (0..sh.bitmap.len()).all(|i| {
                sh.bitmap.is_restored(SegmentId(i)) || sh.failed[i as usize].load(Ordering::SeqCst)
            })
    }

    fn scheduler_loop(&self) {
        let sh = &self.shared;
        while !sh.shutdown.load(Ordering::SeqCst) && !self.all_settled() {
            if self.run_one() {
                continue;
            }
            let mut s = sh.sched.lock();
            if s.queue.is_empty() {
                sh.sched_cv
                    .wait_for(&mut s, std::time::Duration::from_millis(5));
            }
        }
        sh.notify_progress();
    }

    /// Waits for the scheduler threads to finish.
    pub fn join(&self) {
        let handles: Vec<_> = self.workers.lock().drain(..).collect();
        for h in handles {
            h.join().expect("restore worker panicked");
        }
    }

    /// Stops scheduler threads and fails pending waits.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.sched_cv.notify_all();
        self.shared.notify_progress();
        self.join();
    }

    pub fn restore_status(&self) -> RestoreStatus {
        let sh = &self.shared;
        RestoreStatus {
            restored_count: sh.bitmap.restored_count(),
            total: sh.bitmap.len(),
            bytes_restored: sh.bytes_restored.load(Ordering::SeqCst),
            queue_depth: sh.sched.lock().queue.len(),
        }
    }

    /// Successful restorations of `segment` so far.
    pub fn execution_count(&self, segment: SegmentId) -> u32 {
        self.shared.successes[segment.0 as usize].load(Ordering::SeqCst)
    }

    pub fn events(&self) -> Vec<BatchEvent> {
        self.shared.events.lock().clone()
    }
}

impl Drop for RestoreManager {
    fn drop(&mut self) {
        if !self.workers.get_mut().is_empty() {
            self.shutdown();
        }
    }
}

impl SegmentGate for RestoreManager {
    fn segment_of(&self, page: PageId) -> SegmentId {
        self.shared.geometry.segment_of(page)
    }

    fn is_restored(&self, segment: SegmentId) -> bool {
        self.shared.bitmap.is_restored(segment)
    }

    fn request(&self, segment: SegmentId) -> Result<(), StorageError> {
        self.request_segment(segment)?;
        Ok(())
    }

    fn wait(&self, segment: SegmentId) -> Result<(), StorageError> {
        self.check_segment(segment)?;
        Ok(self.shared.wait(segment)?)
    }
}

/// Starts instant restore for a failed pool: builds the manager, reroutes
/// the pool's misses through it and starts the scheduler threads.
pub fn begin_restore(
    pool: &BufferPool,
    ctx: RestoreContext,
    clock: Arc<dyn Clock>,
) -> Result<Arc<RestoreManager>, RestoreError> {
    if !pool.is_failed() {
        return Err(RestoreError::NotFailed);
    }
    let replacement = ctx.replacement.clone();
    let mgr = RestoreManager::new(ctx, clock)?;
    pool.attach_restore(mgr.clone(), replacement)?;
    mgr.spawn_workers();
    Ok(mgr)
}
