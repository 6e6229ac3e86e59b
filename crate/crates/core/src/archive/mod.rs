//! Indexed log archive.
//!
//! The archiver reads the durable log into an in-memory workspace and emits
//! it as immutable run files, each covering a contiguous LSN interval and
//! sorted by `(page_id, lsn)`. The directory listing is the manifest: a run
//! is published by renaming its shadow file into place, and merges publish
//! the merged run before deleting their inputs. Runs that are covered by a
//! wider run are garbage from an interrupted merge and are removed on open.

pub mod bloom;
pub mod merge;
pub mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

pub use bloom::BloomFilter;
pub use merge::MergedLogStream;
pub use run::{RunFile, DEFAULT_BLOCK_SIZE};

use crate::clock::{ClockMode, LatencyModel};
use crate::storage::{IoStats, IoTimer};
use crate::types::{Lsn, PageId};
use crate::wal::{LogRecord, Wal, WalError};

/// Probes over at most this many pages consult the bloom filters.
const BLOOM_PROBE_LIMIT: u64 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wal(#[from] WalError),

    #[error("corrupt run {name}: {reason}")]
    CorruptRun { name: String, reason: &'static str },

    #[error("archive has a gap: expected a run starting at {expected}, found {found}")]
    Gap { expected: Lsn, found: Lsn },

    #[error("no run starts at {0}")]
    UnknownRun(Lsn),

    #[error("runs to merge are not adjacent")]
    NotAdjacent,

    #[error("merge of {count} runs exceeds fan-in {fan_in}")]
    FanIn { count: usize, fan_in: usize },

    #[error("nothing to merge")]
    EmptyMerge,

    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
}

/// Where an injected crash interrupts a publish.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// Shadow file written and synced, not yet renamed.
    BeforeRename,
    /// Renamed into place, in-memory manifest not updated.
    AfterRename,
    /// Merge output published, inputs not yet deleted.
    BeforeDelete,
}

#[derive(Copy, Clone, Debug)]
pub struct ArchiveConfig {
    pub block_size: usize,
    pub latency: LatencyModel,
    pub mode: ClockMode,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            latency: LatencyModel::ZERO,
            mode: ClockMode::Virtual,
        }
    }
}

pub type Snapshot = Arc<Vec<Arc<RunFile>>>;

/// Directory of run files. Probes work on an immutable snapshot of the
/// manifest; publishing swaps the snapshot atomically.
pub struct ArchiveDir {
    path: PathBuf,
    config: ArchiveConfig,
    timer: IoTimer,
    runs: RwLock<Snapshot>,
    /// Serializes publishers (archiver and maintenance merges).
    publish: Mutex<()>,
    crash: Mutex<Option<CrashPoint>>,
    next_tmp: std::sync::atomic::AtomicU64,
}

impl std::fmt::Debug for ArchiveDir {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArchiveDir")
            .field("path", &self.path)
            .field("runs", &self.run_count())
            .field("archived_upto", &self.archived_upto())
            .finish()
    }
}

impl ArchiveDir {
    /// Opens (or creates) an archive directory. Shadow files are deleted
    /// and runs superseded by a merged run are removed.
    pub fn open(path: &Path, config: ArchiveConfig) -> Result<ArchiveDir, ArchiveError> {
        fs::create_dir_all(path)?;
        let mut found = Vec::new();
        for entry in fs::read_dir(path)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".tmp") {
                fs::remove_file(entry.path())?;
            } else if let Some((b, e)) = run::parse_run_file_name(&name) {
                found.push((b, e, entry.path()));
            }
        }
        // Widest run first among equal starts.
        found.sort_by_key(|&(b, e, _)| (b, std::cmp::Reverse(e)));
        let mut runs = Vec::new();
        let mut cursor = Lsn(0);
        for (b, e, p) in found {
            if e <= cursor && !runs.is_empty() {
                log::info!("removing superseded run {}", p.display());
                fs::remove_file(&p)?;
                continue;
            }
            if b != cursor {
                return Err(ArchiveError::Gap {
                    expected: cursor,
                    found: b,
                });
            }
            runs.push(Arc::new(RunFile::open(&p)?));
            cursor = e;
        }
        Ok(ArchiveDir {
            path: path.to_path_buf(),
            config,
            timer: IoTimer::new(config.latency, config.mode),
            runs: RwLock::new(Arc::new(runs)),
            publish: Mutex::new(()),
            crash: Mutex::new(None),
            next_tmp: std::sync::atomic::AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config(&self) -> ArchiveConfig {
        self.config
    }

    pub fn stats(&self) -> IoStats {
        self.timer.stats()
    }

    /// Arms a crash that makes the next publish stop at `point`.
    pub fn inject_crash(&self, point: CrashPoint) {
        *self.crash.lock() = Some(point);
    }

    fn crash_at(&self, point: CrashPoint) -> Result<(), ArchiveError> {
        let mut armed = self.crash.lock();
        if *armed == Some(point) {
            *armed = None;
            return Err(ArchiveError::InjectedCrash(point));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        self.runs.read().clone()
    }

    pub fn run_count(&self) -> usize {
        self.runs.read().len()
    }

    /// Every log record below this LSN is archived.
    pub fn archived_upto(&self) -> Lsn {
        self.runs.read().last().map_or(Lsn(0), |r| r.end())
    }

    /// Writes the shadow file, syncs it and renames it into place.
    fn write_file(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, ArchiveError> {
        let n = self
            .next_tmp
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let tmp = self.path.join(format!("{name}.{n}.tmp"));
        let dest = self.path.join(name);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_data()?;
        }
        self.timer.charge_write(bytes.len() as u64);
        self.crash_at(CrashPoint::BeforeRename)?;
        fs::rename(&tmp, &dest)?;
        self.crash_at(CrashPoint::AfterRename)?;
        Ok(dest)
    }

    /// Sorts `records` (given in LSN order) by page id, keeping LSN order
    /// within a page, and publishes them as the run `[begin, end)`.
    pub fn write_run(
        &self,
        begin: Lsn,
        end: Lsn,
        records: &[LogRecord],
    ) -> Result<Arc<RunFile>, ArchiveError> {
        let mut sorted = records.to_vec();
        sorted.sort_by_key(|r| r.page_id);
        self.write_sorted_run(begin, end, &sorted)
    }

    fn write_sorted_run(
        &self,
        begin: Lsn,
        end: Lsn,
        sorted: &[LogRecord],
    ) -> Result<Arc<RunFile>, ArchiveError> {
        let _publisher = self.publish.lock();
        let upto = self.archived_upto();
        if begin != upto {
            return Err(ArchiveError::Gap {
                expected: upto,
                found: begin,
            });
        }
        let bytes = run::encode_run(begin, end, sorted, self.config.block_size);
        let path = self.write_file(&run::run_file_name(begin, end), &bytes)?;
        let run = Arc::new(RunFile::open(&path)?);
        let mut runs = self.runs.write();
        let mut next = (**runs).clone();
        next.push(run.clone());
        *runs = Arc::new(next);
        Ok(run)
    }

    /// Merges the adjacent runs starting at `begins` into one run.
    pub fn merge_runs(&self, begins: &[Lsn], fan_in: usize) -> Result<Arc<RunFile>, ArchiveError> {
        if begins.is_empty() {
            return Err(ArchiveError::EmptyMerge);
        }
        if begins.len() > fan_in {
            return Err(ArchiveError::FanIn {
                count: begins.len(),
                fan_in,
            });
        }
        let _publisher = self.publish.lock();
        let snapshot = self.snapshot();
        let mut inputs = Vec::with_capacity(begins.len());
        for b in begins {
            let run = snapshot
                .iter()
                .find(|r| r.begin() == *b)
                .ok_or(ArchiveError::UnknownRun(*b))?;
            inputs.push(run.clone());
        }
        inputs.sort_by_key(|r| r.begin());
        if inputs.windows(2).any(|w| w[0].end() != w[1].begin()) {
            return Err(ArchiveError::NotAdjacent);
        }
        if inputs.len() == 1 {
            return Ok(inputs.pop().unwrap());
        }
        let mut contents = Vec::with_capacity(inputs.len());
        for r in &inputs {
            self.timer.charge_read(r.data_len());
            contents.push(r.read_all()?);
        }
        let merged: Vec<LogRecord> = MergedLogStream::new(contents).collect();
        let begin = inputs[0].begin();
        let end = inputs.last().unwrap().end();
        let bytes = run::encode_run(begin, end, &merged, self.config.block_size);
        let path = self.write_file(&run::run_file_name(begin, end), &bytes)?;
        let out = Arc::new(RunFile::open(&path)?);
        {
            let mut runs = self.runs.write();
            let mut next: Vec<Arc<RunFile>> = Vec::with_capacity(runs.len());
            let mut placed = false;
            for r in runs.iter() {
                if r.begin() >= begin && r.end() <= end {
                    if !placed {
                        next.push(out.clone());
                        placed = true;
                    }
                } else {
                    next.push(r.clone());
                }
            }
            *runs = Arc::new(next);
        }
        self.crash_at(CrashPoint::BeforeDelete)?;
        for r in &inputs {
            // Open handles held by concurrent probes stay readable.
            fs::remove_file(r.path())?;
        }
        Ok(out)
    }

    /// Merges the eldest `fan_in` runs while there are more than
    /// `2 * fan_in` runs. Returns the number of merges done.
    pub fn maintain(&self, fan_in: usize) -> Result<usize, ArchiveError> {
        assert!(fan_in >= 2, "fan-in must be at least 2");
        let mut merges = 0;
        loop {
            let snapshot = self.snapshot();
            if snapshot.len() <= 2 * fan_in {
                return Ok(merges);
            }
            let begins: Vec<Lsn> = snapshot.iter().take(fan_in).map(|r| r.begin()).collect();
            self.merge_runs(&begins, fan_in)?;
            merges += 1;
        }
    }

    /// Records for pages in `[first, last]` with `lsn >= min_lsn`, sorted by
    /// `(page_id, lsn)`. Each contributing run is read with one operation
    /// covering its matching blocks.
    pub fn probe(&self, first: PageId, last: PageId, min_lsn: Lsn) -> Result<MergedLogStream, ArchiveError> {
        Ok(self.probe_snapshot(&self.snapshot(), first, last, min_lsn)?.0)
    }

    /// Like [`ArchiveDir::probe`] on a given snapshot; also returns how many
    /// runs were read.
    pub fn probe_snapshot(
        &self,
        snapshot: &[Arc<RunFile>],
        first: PageId,
        last: PageId,
        min_lsn: Lsn,
    ) -> Result<(MergedLogStream, usize), ArchiveError> {
        if first > last {
            return Ok((MergedLogStream::empty(), 0));
        }
        let use_bloom = last.0 - first.0 < BLOOM_PROBE_LIMIT;
        let mut inputs = Vec::new();
        for run in snapshot.iter().filter(|r| r.end() > min_lsn) {
            if use_bloom && !(first.0..=last.0).any(|p| run.bloom().may_contain(PageId(p))) {
                continue;
            }
            let Some((start, end)) = run.block_range(first, last) else {
                continue;
            };
            self.timer.charge_read(end - start);
            let records: Vec<LogRecord> = run
                .read_records(start, end)?
                .into_iter()
                .filter(|r| r.page_id >= first && r.page_id <= last && r.lsn >= min_lsn)
                .collect();
            inputs.push(records);
        }
        let reads = inputs.len();
        Ok((MergedLogStream::new(inputs), reads))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ArchiveMode {
    /// Sort and index each run.
    Sorted,
    /// Copy log records as they are; only used to measure archiving cost.
    PlainCopy,
}

#[derive(Copy, Clone, Debug)]
pub struct ArchiverConfig {
    pub run_size_limit: usize,
    pub fan_in: usize,
    pub mode: ArchiveMode,
}

impl Default for ArchiverConfig {
    fn default() -> Self {
        ArchiverConfig {
            run_size_limit: 4096,
            fan_in: 8,
            mode: ArchiveMode::Sorted,
        }
    }
}

/// Single-writer log archiver that owns the sort workspace.
pub struct LogArchiver {
    wal: Arc<Wal>,
    dir: Arc<ArchiveDir>,
    config: ArchiverConfig,
    workspace: Vec<LogRecord>,
    workspace_begin: Lsn,
    cursor: Lsn,
    copied: u64,
}

impl LogArchiver {
    pub fn new(wal: Arc<Wal>, dir: Arc<ArchiveDir>, config: ArchiverConfig) -> Self {
        assert!(config.run_size_limit > 0, "run size limit must be positive");
        let upto = dir.archived_upto();
        LogArchiver {
            wal,
            dir,
            config,
            workspace: Vec::new(),
            workspace_begin: upto,
            cursor: upto,
            copied: 0,
        }
    }

    pub fn dir(&self) -> &Arc<ArchiveDir> {
        &self.dir
    }

    pub fn workspace_len(&self) -> usize {
        self.workspace.len()
    }

    /// Next LSN to be read from the log.
    pub fn cursor(&self) -> Lsn {
        self.cursor
    }

    /// Everything below this LSN is archived (in plain-copy mode: copied).
    pub fn archived_upto(&self) -> Lsn {
        match self.config.mode {
            ArchiveMode::Sorted => self.dir.archived_upto(),
            ArchiveMode::PlainCopy => self.workspace_begin,
        }
    }

    /// Bytes written by plain-copy mode.
    pub fn copied_bytes(&self) -> u64 {
        self.copied
    }

    /// Reads up to `budget` durable records into the workspace, emitting a
    /// run every time the workspace fills up.
    pub fn archive_step(&mut self, budget: usize) -> Result<Lsn, ArchiveError> {
        let mut scan = self.wal.scan(self.cursor);
        let mut taken = 0;
        while taken < budget {
            let Some(rec) = scan.next() else { break };
            let rec = rec?;
            self.cursor = Lsn(rec.lsn.0 + rec.encoded_len() as u64);
            self.workspace.push(rec);
            taken += 1;
            if self.workspace.len() >= self.config.run_size_limit {
                self.emit_run()?;
                scan = self.wal.scan(self.cursor);
            }
        }
        Ok(self.archived_upto())
    }

    /// Publishes the workspace as the run `[workspace_begin, cursor)`. On
    /// error the workspace is kept so the call can be retried.
    pub fn emit_run(&mut self) -> Result<(), ArchiveError> {
        match self.config.mode {
            ArchiveMode::Sorted => {
                self.dir
                    .write_run(self.workspace_begin, self.cursor, &self.workspace)?;
            }
            ArchiveMode::PlainCopy => {
                let mut bytes = Vec::new();
                for r in &self.workspace {
                    r.encode(&mut bytes);
                }
                let name = format!("copy_{}_{}.log", self.workspace_begin.0, self.cursor.0);
                self.dir.write_file(&name, &bytes)?;
                self.copied += bytes.len() as u64;
            }
        }
        self.workspace.clear();
        self.workspace_begin = self.cursor;
        Ok(())
    }

    /// Archives everything below `target` (which must be durable), emitting
    /// a final, possibly small or empty, run.
    pub fn archive_up_to(&mut self, target: Lsn) -> Result<(), ArchiveError> {
        if self.archived_upto() >= target {
            return Ok(());
        }
        self.wal.flush(target)?;
        while self.cursor < target {
            let before = self.cursor;
            self.archive_step(self.config.run_size_limit)?;
            if self.cursor == before {
                // No further records: the rest of the interval is empty log.
                self.cursor = self.wal.durable_lsn().max(target).max(self.cursor);
            }
        }
        if self.archived_upto() < self.cursor {
            self.emit_run()?;
        }
        Ok(())
    }

    /// Runs the maintenance merge policy.
    pub fn maintain(&self) -> Result<usize, ArchiveError> {
        if self.config.mode == ArchiveMode::PlainCopy {
            return Ok(0);
        }
        self.dir.maintain(self.config.fan_in)
    }
}
