//! Buffer pool with CLOCK replacement.
//!
//! A fix pins a frame and takes its latch in shared or exclusive mode. The
//! pool-wide table lock is only held to look up or install a mapping, never
//! across device I/O or while waiting for a restore.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::device::DeviceRole;
use super::page::Page;
use super::volume::Volume;
use super::{FailureToken, StorageError};
use crate::types::{Geometry, Lsn, PageId, SegmentId};
use crate::wal::{LogOp, Wal};

/// Restore hook consulted for misses after a media failure.
pub trait SegmentGate: Send + Sync {
    fn segment_of(&self, page: PageId) -> SegmentId;

    fn is_restored(&self, segment: SegmentId) -> bool;

    /// Makes sure a restore of `segment` is requested. Never blocks.
    fn request(&self, segment: SegmentId) -> Result<(), StorageError>;

    /// Blocks until `segment` is restored.
    fn wait(&self, segment: SegmentId) -> Result<(), StorageError>;
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FixMode {
    Shared,
    Exclusive,
}

/// Why a fix could not complete without waiting.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Blocker {
    /// The device failed and no restore manager is attached yet.
    RestoreNotStarted,
    /// The segment must be restored first. A request has been issued.
    Segment(SegmentId),
}

pub enum Fix<'a> {
    Ready(PageHandle<'a>),
    Pending(Blocker),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub write_backs: u64,
}

struct Frame {
    latch: RwLock<Option<Page>>,
    pin: AtomicU32,
    dirty: AtomicBool,
    referenced: AtomicBool,
}

struct Table {
    map: HashMap<PageId, usize>,
    owner: Vec<Option<PageId>>,
    free: Vec<usize>,
    hand: usize,
}

enum Media {
    Healthy,
    Failed,
    Restoring {
        gate: Arc<dyn SegmentGate>,
        replacement: Volume,
    },
}

enum Target {
    Database,
    Replacement(Volume),
    Blocked(Blocker),
}

enum Victim {
    Frame(usize),
    WriteBack(usize, PageId),
    Blocked(Blocker),
}

enum Latch<'a> {
    Shared(RwLockReadGuard<'a, Option<Page>>),
    Exclusive(RwLockWriteGuard<'a, Option<Page>>),
}

/// A pinned, latched buffer frame. Dropping the handle releases the latch
/// and then the pin.
pub struct PageHandle<'a> {
    pool: &'a BufferPool,
    frame: usize,
    latch: Option<Latch<'a>>,
}

impl<'a> PageHandle<'a> {
    pub fn page(&self) -> &Page {
        match self.latch.as_ref().expect("latched") {
            Latch::Shared(g) => g.as_ref().expect("loaded"),
            Latch::Exclusive(g) => g.as_ref().expect("loaded"),
        }
    }

    pub fn page_mut(&mut self) -> Result<&mut Page, StorageError> {
        match self.latch.as_mut().expect("latched") {
            Latch::Shared(_) => Err(StorageError::SharedLatch),
            Latch::Exclusive(g) => Ok(g.as_mut().expect("loaded")),
        }
    }

    pub fn mode(&self) -> FixMode {
        match self.latch {
            Some(Latch::Shared(_)) => FixMode::Shared,
            _ => FixMode::Exclusive,
        }
    }

    pub fn pin_count(&self) -> u32 {
        self.pool.frames[self.frame].pin.load(Ordering::SeqCst)
    }

    pub fn frame_index(&self) -> usize {
        self.frame
    }

    /// Logs `op` for this page, applies it and advances the page LSN. The
    /// frame is marked dirty.
    pub fn apply_logged(&mut self, txn_id: u64, op: LogOp) -> Result<Lsn, StorageError> {
        let page_size = self.pool.geometry.page_size;
        let wal = self.pool.wal.clone();
        let frame = self.frame;
        let page = self.page_mut()?;
        if !page.fits_after(&op, page_size) {
            return Err(super::PageError::Full(page.id).into());
        }
        let lsn = wal.append(page.id, txn_id, op.clone())?;
        page.apply_op(&op);
        page.lsn = lsn;
        self.pool.frames[frame].dirty.store(true, Ordering::SeqCst);
        Ok(lsn)
    }
}

impl Drop for PageHandle<'_> {
    fn drop(&mut self) {
        drop(self.latch.take());
        self.pool.unpin(self.frame);
    }
}

struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    write_backs: AtomicU64,
}

pub struct BufferPool {
    geometry: Geometry,
    frames: Box<[Frame]>,
    table: Mutex<Table>,
    database: Volume,
    wal: Arc<Wal>,
    media: Mutex<Media>,
    media_cv: Condvar,
    failed: AtomicBool,
    counters: Counters,
}

impl BufferPool {
    pub fn new(database: Volume, wal: Arc<Wal>, capacity: usize) -> Self {
        assert!(capacity > 0, "buffer pool needs at least one frame");
        let frames = (0..capacity)
            .map(|_| Frame {
                latch: RwLock::new(None),
                pin: AtomicU32::new(0),
                dirty: AtomicBool::new(false),
                referenced: AtomicBool::new(false),
            })
            .collect();
        BufferPool {
            geometry: database.geometry(),
            frames,
            table: Mutex::new(Table {
                map: HashMap::with_capacity(capacity),
                owner: vec![None; capacity],
                free: (0..capacity).rev().collect(),
                hand: 0,
            }),
            database,
            wal,
            media: Mutex::new(Media::Healthy),
            media_cv: Condvar::new(),
            failed: AtomicBool::new(false),
            counters: Counters {
                hits: AtomicU64::new(0),
                misses: AtomicU64::new(0),
                evictions: AtomicU64::new(0),
                write_backs: AtomicU64::new(0),
            },
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn capacity(&self) -> usize {
        self.frames.len()
    }

    pub fn wal(&self) -> &Arc<Wal> {
        &self.wal
    }

    pub fn database(&self) -> &Volume {
        &self.database
    }

    pub fn stats(&self) -> PoolStats {
        PoolStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            evictions: self.counters.evictions.load(Ordering::Relaxed),
            write_backs: self.counters.write_backs.load(Ordering::Relaxed),
        }
    }

    pub fn is_resident(&self, id: PageId) -> bool {
        self.table.lock().map.contains_key(&id)
    }

    pub fn resident_count(&self) -> usize {
        self.table.lock().map.len()
    }

    /// Pin count of a resident page, `None` if not resident.
    pub fn pin_count(&self, id: PageId) -> Option<u32> {
        let t = self.table.lock();
        t.map
            .get(&id)
            .map(|&f| self.frames[f].pin.load(Ordering::SeqCst))
    }

    pub fn is_dirty(&self, id: PageId) -> Option<bool> {
        let t = self.table.lock();
        t.map
            .get(&id)
            .map(|&f| self.frames[f].dirty.load(Ordering::SeqCst))
    }

    /// Fixes a page, waiting for restore if necessary.
    pub fn fix_page(&self, id: PageId, mode: FixMode) -> Result<PageHandle<'_>, StorageError> {
        loop {
            match self.try_fix(id, mode)? {
                Fix::Ready(h) => return Ok(h),
                Fix::Pending(blocker) => self.wait_for(blocker)?,
            }
        }
    }

    /// Releases a fix. `mark_dirty` is OR-ed into the frame's dirty flag.
    ///
    /// Taking the handle by value makes a second unfix of the same fix a
    /// compile error:
    ///
    /// ```compile_fail
    /// # fn f(pool: &segrestore::storage::BufferPool, h: segrestore::storage::PageHandle<'_>) {
    /// pool.unfix_page(h, false);
    /// pool.unfix_page(h, false);
    /// # }
    /// ```
    pub fn unfix_page(&self, handle: PageHandle<'_>, mark_dirty: bool) {
        if mark_dirty {
            self.frames[handle.frame].dirty.store(true, Ordering::SeqCst);
        }
        drop(handle);
    }

    /// Blocks until `blocker` is resolved.
    pub fn wait_for(&self, blocker: Blocker) -> Result<(), StorageError> {
        match blocker {
            Blocker::RestoreNotStarted => {
                let mut media = self.media.lock();
                while matches!(*media, Media::Failed) {
                    self.media_cv.wait(&mut media);
                }
                Ok(())
            }
            Blocker::Segment(seg) => {
                let gate = match &*self.media.lock() {
                    Media::Restoring { gate, .. } => gate.clone(),
                    _ => return Ok(()),
                };
                gate.wait(seg)
            }
        }
    }

    /// Fixes a page without blocking on restore.
    pub fn try_fix(&self, id: PageId, mode: FixMode) -> Result<Fix<'_>, StorageError> {
        if !self.geometry.contains(id) {
            return Err(StorageError::InvalidPage(id));
        }
        loop {
            let mut table = self.table.lock();
            if let Some(&f) = table.map.get(&id) {
                let frame = &self.frames[f];
                frame.pin.fetch_add(1, Ordering::SeqCst);
                frame.referenced.store(true, Ordering::Relaxed);
                drop(table);
                let latch = self.latch(f, mode);
                let loaded = match &latch {
                    Latch::Shared(g) => g.is_some(),
                    Latch::Exclusive(g) => g.is_some(),
                };
                let handle = PageHandle {
                    pool: self,
                    frame: f,
                    latch: Some(latch),
                };
                if !loaded {
                    // Loader failed; the mapping is gone or going.
                    drop(handle);
                    continue;
                }
                self.counters.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Fix::Ready(handle));
            }

            let source = match self.read_target(id)? {
                Target::Blocked(b) => return Ok(Fix::Pending(b)),
                t => t,
            };
            let f = match self.pick_victim(&mut table)? {
                Victim::Frame(f) => f,
                Victim::WriteBack(f, pid) => {
                    drop(table);
                    self.write_back(f, pid)?;
                    continue;
                }
                Victim::Blocked(b) => return Ok(Fix::Pending(b)),
            };
            if let Some(old) = table.owner[f].take() {
                table.map.remove(&old);
                self.counters.evictions.fetch_add(1, Ordering::Relaxed);
            }
            table.map.insert(id, f);
            table.owner[f] = Some(id);
            let frame = &self.frames[f];
            frame.pin.store(1, Ordering::SeqCst);
            frame.dirty.store(false, Ordering::SeqCst);
            frame.referenced.store(true, Ordering::Relaxed);
            let mut guard = frame.latch.write();
            *guard = None;
            drop(table);

            let read = match &source {
                Target::Database => self.database.read_page(id),
                Target::Replacement(vol) => vol.read_page(id),
                Target::Blocked(_) => unreachable!(),
            };
            match read {
                Ok(page) => *guard = Some(page),
                Err(e) => {
                    drop(guard);
                    self.discard(f, id);
                    if matches!(e, StorageError::MediaFailure(DeviceRole::Database)) {
                        // Failed underneath us; route again.
                        continue;
                    }
                    return Err(e);
                }
            }
            self.counters.misses.fetch_add(1, Ordering::Relaxed);
            let latch = match mode {
                FixMode::Exclusive => Latch::Exclusive(guard),
                FixMode::Shared => Latch::Shared(RwLockWriteGuard::downgrade(guard)),
            };
            return Ok(Fix::Ready(PageHandle {
                pool: self,
                frame: f,
                latch: Some(latch),
            }));
        }
    }

    fn latch(&self, f: usize, mode: FixMode) -> Latch<'_> {
        match mode {
            FixMode::Shared => Latch::Shared(self.frames[f].latch.read()),
            FixMode::Exclusive => Latch::Exclusive(self.frames[f].latch.write()),
        }
    }

    fn unpin(&self, f: usize) {
        let prev = self.frames[f].pin.fetch_sub(1, Ordering::SeqCst);
        assert!(prev > 0, "unpin of unpinned frame {f}");
    }

    fn discard(&self, f: usize, id: PageId) {
        let mut t = self.table.lock();
        if t.owner[f] == Some(id) {
            t.owner[f] = None;
            t.map.remove(&id);
            t.free.push(f);
        }
        drop(t);
        self.unpin(f);
    }

    /// Where a miss on `id` is served from.
    fn read_target(&self, id: PageId) -> Result<Target, StorageError> {
        if !self.failed.load(Ordering::SeqCst) {
            return Ok(Target::Database);
        }
        self.routed_target(id, true)
    }

    /// Where a dirty `id` may be written. Does not issue restore requests
    /// unless `request` is set.
    fn routed_target(&self, id: PageId, request: bool) -> Result<Target, StorageError> {
        let media = self.media.lock();
        match &*media {
            Media::Healthy => Ok(Target::Database),
            Media::Failed => Ok(Target::Blocked(Blocker::RestoreNotStarted)),
            Media::Restoring { gate, replacement } => {
                let seg = gate.segment_of(id);
                if gate.is_restored(seg) {
                    Ok(Target::Replacement(replacement.clone()))
                } else {
                    if request {
                        gate.request(seg)?;
                    }
                    Ok(Target::Blocked(Blocker::Segment(seg)))
                }
            }
        }
    }

    fn write_target(&self, id: PageId, request: bool) -> Result<Target, StorageError> {
        if !self.failed.load(Ordering::SeqCst) {
            return Ok(Target::Database);
        }
        self.routed_target(id, request)
    }

    fn pick_victim(&self, t: &mut Table) -> Result<Victim, StorageError> {
        if let Some(f) = t.free.pop() {
            return Ok(Victim::Frame(f));
        }
        let n = self.frames.len();
        let mut writable: Option<(usize, PageId)> = None;
        let mut blocked: Option<(usize, PageId)> = None;
        for _ in 0..2 * n {
            let f = t.hand;
            t.hand = (t.hand + 1) % n;
            let frame = &self.frames[f];
            if frame.pin.load(Ordering::SeqCst) > 0 {
                continue;
            }
            if frame.referenced.swap(false, Ordering::Relaxed) {
                continue;
            }
            if frame.dirty.load(Ordering::SeqCst) {
                let pid = t.owner[f].expect("dirty frame has an owner");
                if writable.is_none() {
                    match self.write_target(pid, false)? {
                        Target::Blocked(_) => {
                            blocked.get_or_insert((f, pid));
                        }
                        _ => writable = Some((f, pid)),
                    }
                }
                continue;
            }
            return Ok(Victim::Frame(f));
        }
        if let Some((f, pid)) = writable {
            self.frames[f].pin.fetch_add(1, Ordering::SeqCst);
            return Ok(Victim::WriteBack(f, pid));
        }
        if let Some((f, pid)) = blocked {
            return match self.write_target(pid, true)? {
                Target::Blocked(b) => Ok(Victim::Blocked(b)),
                // Restored since the sweep looked at it.
                _ => {
                    self.frames[f].pin.fetch_add(1, Ordering::SeqCst);
                    Ok(Victim::WriteBack(f, pid))
                }
            };
        }
        Err(StorageError::PoolExhausted)
    }

    /// Flushes a frame pinned by the caller and releases the pin.
    fn write_back(&self, f: usize, pid: PageId) -> Result<(), StorageError> {
        let result = self.flush_frame(f, pid);
        self.unpin(f);
        result.map(|_| ())
    }

    /// Writes a pinned frame if it is dirty. Returns whether it wrote.
    fn flush_frame(&self, f: usize, pid: PageId) -> Result<bool, StorageError> {
        let frame = &self.frames[f];
        let guard = frame.latch.read();
        let page = match guard.as_ref() {
            Some(p) if p.id == pid => p,
            _ => return Ok(false),
        };
        if !frame.dirty.load(Ordering::SeqCst) {
            return Ok(false);
        }
        // Write-ahead rule.
        self.wal.flush(page.lsn)?;
        match self.write_target(pid, false)? {
            Target::Database => self.database.write_page(page)?,
            Target::Replacement(vol) => vol.write_page(page)?,
            Target::Blocked(Blocker::Segment(seg)) => {
                return Err(StorageError::SegmentNotRestored(seg))
            }
            Target::Blocked(Blocker::RestoreNotStarted) => {
                return Err(StorageError::MediaFailure(DeviceRole::Database))
            }
        }
        frame.dirty.store(false, Ordering::SeqCst);
        self.counters.write_backs.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }

    /// Writes a resident dirty page to its current home. Clean or
    /// non-resident pages are a no-op.
    pub fn flush_page(&self, id: PageId) -> Result<(), StorageError> {
        let f = {
            let t = self.table.lock();
            match t.map.get(&id) {
                Some(&f) => {
                    self.frames[f].pin.fetch_add(1, Ordering::SeqCst);
                    f
                }
                None => return Ok(()),
            }
        };
        self.write_back(f, id)
    }

    /// Flushes every dirty resident page, in frame order.
    pub fn flush_all(&self) -> Result<usize, StorageError> {
        let resident: Vec<(usize, PageId)> = {
            let t = self.table.lock();
            t.owner
                .iter()
                .enumerate()
                .filter_map(|(f, o)| o.map(|p| (f, p)))
                .collect()
        };
        let mut written = 0;
        for (_, pid) in resident {
            let f = {
                let t = self.table.lock();
                match t.map.get(&pid) {
                    Some(&f) => {
                        self.frames[f].pin.fetch_add(1, Ordering::SeqCst);
                        f
                    }
                    None => continue,
                }
            };
            let r = self.flush_frame(f, pid);
            self.unpin(f);
            if r? {
                written += 1;
            }
        }
        Ok(written)
    }

    /// Injects a media failure on the database device.
    pub fn fail_device(&self) -> Result<FailureToken, StorageError> {
        let mut media = self.media.lock();
        if !matches!(*media, Media::Healthy) {
            return Err(StorageError::AlreadyFailed);
        }
        self.database.device().fail()?;
        self.failed.store(true, Ordering::SeqCst);
        *media = Media::Failed;
        Ok(FailureToken {
            failure_lsn: self.wal.end_lsn(),
        })
    }

    pub fn is_failed(&self) -> bool {
        self.failed.load(Ordering::SeqCst)
    }

    /// Reroutes misses through `gate` and writes of restored segments to
    /// `replacement`. Wakes fixes waiting for restore to start.
    pub fn attach_restore(
        &self,
        gate: Arc<dyn SegmentGate>,
        replacement: Volume,
    ) -> Result<(), StorageError> {
        let mut media = self.media.lock();
        match *media {
            Media::Failed => {
                *media = Media::Restoring { gate, replacement };
                self.media_cv.notify_all();
                Ok(())
            }
            Media::Healthy => Err(StorageError::NotFailed),
            Media::Restoring { .. } => Err(StorageError::AlreadyFailed),
        }
    }

    /// Volume currently holding the pages: the database device before a
    /// failure, the replacement afterwards.
    pub fn live_volume(&self) -> Volume {
        match &*self.media.lock() {
            Media::Restoring { replacement, .. } => replacement.clone(),
            _ => self.database.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::device::Device;
    use crate::wal::WalConfig;

    fn setup(pages: u64, frames: usize) -> BufferPool {
        let g = Geometry::new(512, pages, 4);
        let vol = Volume::create(Arc::new(Device::in_memory(DeviceRole::Database)), g).unwrap();
        let wal = Arc::new(
            Wal::create(Arc::new(Device::in_memory(DeviceRole::Log)), WalConfig::default()).unwrap(),
        );
        BufferPool::new(vol, wal, frames)
    }

    fn set(key: u32, v: u8) -> LogOp {
        LogOp::Set {
            key,
            value: vec![v; 8],
        }
    }

    #[test]
    fn fix_on_healthy_device_pins_once() {
        let pool = setup(8, 4);
        let h = pool.fix_page(PageId(3), FixMode::Shared).unwrap();
        assert_eq!(h.page().id, PageId(3));
        assert_eq!(h.pin_count(), 1);
        pool.unfix_page(h, false);
        assert_eq!(pool.pin_count(PageId(3)), Some(0));
    }

    #[test]
    fn second_fix_shares_the_frame() {
        let pool = setup(8, 4);
        let a = pool.fix_page(PageId(1), FixMode::Shared).unwrap();
        let b = pool.fix_page(PageId(1), FixMode::Shared).unwrap();
        assert_eq!(a.frame_index(), b.frame_index());
        assert_eq!(b.pin_count(), 2);
        pool.unfix_page(a, false);
        assert_eq!(pool.pin_count(PageId(1)), Some(1));
        pool.unfix_page(b, false);
        assert_eq!(pool.pin_count(PageId(1)), Some(0));
    }

    #[test]
    fn pinned_frame_is_not_evicted() {
        let pool = setup(8, 2);
        let keep = pool.fix_page(PageId(0), FixMode::Shared).unwrap();
        for p in 1..8 {
            let h = pool.fix_page(PageId(p), FixMode::Shared).unwrap();
            pool.unfix_page(h, false);
            assert!(pool.is_resident(PageId(0)));
        }
        drop(keep);
        let a = pool.fix_page(PageId(5), FixMode::Shared).unwrap();
        assert!(matches!(
            pool.try_fix(PageId(6), FixMode::Shared),
            Ok(Fix::Ready(_))
        ));
        drop(a);
    }

    #[test]
    fn all_frames_pinned_is_an_error() {
        let pool = setup(8, 1);
        let _a = pool.fix_page(PageId(0), FixMode::Shared).unwrap();
        assert!(matches!(
            pool.try_fix(PageId(1), FixMode::Shared),
            Err(StorageError::PoolExhausted)
        ));
    }

    #[test]
    fn shared_fix_cannot_modify() {
        let pool = setup(8, 2);
        let mut h = pool.fix_page(PageId(0), FixMode::Shared).unwrap();
        assert!(matches!(h.page_mut(), Err(StorageError::SharedLatch)));
        assert!(matches!(
            h.apply_logged(1, set(1, 1)),
            Err(StorageError::SharedLatch)
        ));
    }

    #[test]
    fn flush_of_clean_page_is_a_no_op() {
        let pool = setup(8, 2);
        let h = pool.fix_page(PageId(2), FixMode::Shared).unwrap();
        pool.unfix_page(h, false);
        let before = pool.database().device().stats().writes;
        pool.flush_page(PageId(2)).unwrap();
        pool.flush_page(PageId(7)).unwrap();
        assert_eq!(pool.database().device().stats().writes, before);
    }

    #[test]
    fn flush_forces_the_log_first() {
        let g = Geometry::new(512, 8, 4);
        let vol = Volume::create(Arc::new(Device::in_memory(DeviceRole::Database)), g).unwrap();
        let wal = Arc::new(
            Wal::create(
                Arc::new(Device::in_memory(DeviceRole::Log)),
                WalConfig {
                    flush_every: 1000,
                    ..WalConfig::default()
                },
            )
            .unwrap(),
        );
        let pool = BufferPool::new(vol.clone(), wal.clone(), 2);
        let mut h = pool.fix_page(PageId(4), FixMode::Exclusive).unwrap();
        let lsn = h.apply_logged(9, set(3, 7)).unwrap();
        pool.unfix_page(h, true);
        assert!(wal.durable_lsn() <= lsn);
        assert_eq!(pool.is_dirty(PageId(4)), Some(true));
        pool.flush_page(PageId(4)).unwrap();
        assert!(wal.durable_lsn() > lsn);
        assert_eq!(pool.is_dirty(PageId(4)), Some(false));
        assert_eq!(vol.read_page(PageId(4)).unwrap().lsn, lsn);
    }

    #[test]
    fn eviction_writes_back_dirty_pages() {
        let pool = setup(8, 2);
        for p in 0..8u64 {
            let mut h = pool.fix_page(PageId(p), FixMode::Exclusive).unwrap();
            h.apply_logged(1, set(p as u32, p as u8)).unwrap();
            pool.unfix_page(h, true);
        }
        pool.flush_all().unwrap();
        for p in 0..8u64 {
            let page = pool.database().read_page(PageId(p)).unwrap();
            assert_eq!(page.records.get(&(p as u32)), Some(&vec![p as u8; 8]));
        }
        assert!(pool.stats().write_backs >= 8);
    }

    #[test]
    fn failed_device_without_restore_blocks_misses() {
        let pool = setup(8, 4);
        let h = pool.fix_page(PageId(0), FixMode::Shared).unwrap();
        pool.unfix_page(h, false);
        pool.fail_device().unwrap();
        assert!(matches!(pool.fail_device(), Err(StorageError::AlreadyFailed)));
        // Resident pages keep working.
        assert!(matches!(
            pool.try_fix(PageId(0), FixMode::Shared),
            Ok(Fix::Ready(_))
        ));
        assert!(matches!(
            pool.try_fix(PageId(1), FixMode::Shared),
            Ok(Fix::Pending(Blocker::RestoreNotStarted))
        ));
        assert_eq!(pool.database().device().stats().rejected, 0);
    }

    #[test]
    fn invalid_page_is_rejected() {
        let pool = setup(8, 2);
        assert!(matches!(
            pool.try_fix(PageId(8), FixMode::Shared),
            Err(StorageError::InvalidPage(_))
        ));
    }
}
