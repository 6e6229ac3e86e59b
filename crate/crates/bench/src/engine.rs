//! Builds the storage stack that a benchmark run drives.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use segrestore::archive::{ArchiveConfig, ArchiveDir, ArchiverConfig, LogArchiver};
use segrestore::backup::BackupImage;
use segrestore::clock::{self, ClockMode, LatencyModel};
use segrestore::restore::{RestoreConfig, RestoreContext};
use segrestore::storage::{Backend, BufferPool, Device, DeviceRole, FixMode, MemBackend, Volume};
use segrestore::wal::{Wal, WalConfig};
use segrestore::{Geometry, Lsn};

use crate::config::WorkloadConfig;
use crate::workload::AccessGenerator;
use crate::HarnessError;

/// Two devices over the same bytes: one without latency for setup and one
/// with the configured latency for the measured run.
fn paired_devices(role: DeviceRole, latency: LatencyModel, mode: ClockMode, capacity: usize) -> (Arc<Device>, Arc<Device>) {
    let backend = Arc::new(MemBackend::with_capacity(capacity));
    let setup = Device::new(role, Box::new(backend.clone()) as Box<dyn Backend>, LatencyModel::ZERO, mode);
    let live = Device::new(role, Box::new(backend) as Box<dyn Backend>, latency, mode);
    (Arc::new(setup), Arc::new(live))
}

pub struct Engine {
    pub config: WorkloadConfig,
    pub geometry: Geometry,
    pub pool: BufferPool,
    pub wal: Arc<Wal>,
    pub archive: Arc<ArchiveDir>,
    pub archiver: Mutex<LogArchiver>,
    pub backup: Option<BackupImage>,
    pub generator: AccessGenerator,
    replacement: Mutex<Option<Volume>>,
    reads_before_run: AtomicU64,
    work_dir: PathBuf,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("geometry", &self.geometry)
            .field("work_dir", &self.work_dir)
            .finish()
    }
}

impl Engine {
    /// Formats the database, takes the full backup (when a failure is
    /// planned) and opens an empty log archive under `work_dir/archive`.
    pub fn build(config: &WorkloadConfig, work_dir: &Path) -> Result<Engine, HarnessError> {
        config.validate()?;
        let geometry = config.geometry();
        let mode = config.clock;
        let volume_len = geometry.volume_bytes() as usize + 64;

        let (db_setup, db_live) = paired_devices(DeviceRole::Database, config.timing.data, mode, volume_len);
        let formatted = Volume::create(db_setup, geometry)?;

        let wal = Arc::new(Wal::create(
            Arc::new(Device::new(
                DeviceRole::Log,
                Box::new(MemBackend::new()),
                config.timing.log,
                mode,
            )),
            WalConfig::default(),
        )?);

        let backup = if config.failure == crate::config::FailAt::Never {
            None
        } else {
            let (bk_setup, bk_live) = paired_devices(DeviceRole::Backup, config.timing.data, mode, volume_len);
            BackupImage::from_volume(&formatted, wal.durable_lsn(), bk_setup)?;
            Some(BackupImage::from_device(bk_live)?)
        };

        let archive_path = work_dir.join("archive");
        if archive_path.exists() {
            std::fs::remove_dir_all(&archive_path)?;
        }
        std::fs::create_dir_all(&archive_path)?;
        let archive = Arc::new(ArchiveDir::open(
            &archive_path,
            ArchiveConfig {
                latency: config.timing.archive,
                mode,
                ..Default::default()
            },
        )?);
        let archiver = LogArchiver::new(
            wal.clone(),
            archive.clone(),
            ArchiverConfig {
                run_size_limit: config.run_size_limit,
                fan_in: config.fan_in,
                mode: config.archive_mode,
            },
        );

        let (database, _) = clock::measure(|| Volume::open(db_live));
        let pool = BufferPool::new(database?, wal.clone(), config.pool_pages);

        Ok(Engine {
            config: config.clone(),
            geometry,
            pool,
            wal,
            archive,
            archiver: Mutex::new(archiver),
            backup,
            generator: AccessGenerator::for_config(config),
            replacement: Mutex::new(None),
            reads_before_run: AtomicU64::new(0),
            work_dir: work_dir.to_path_buf(),
        })
    }

    /// Loads the hottest pages into the pool. Returns the simulated time it
    /// took, which callers normally ignore. Reads done here are not counted
    /// by [`data_reads`](Self::data_reads).
    pub fn warm_up(&self) -> Result<u64, HarnessError> {
        let n = (self.config.pool_pages as u64).min(self.generator.hot_pages());
        let (r, ns) = clock::measure(|| -> Result<(), HarnessError> {
            for rank in 0..n {
                let h = self.pool.fix_page(self.generator.page_of_rank(rank), FixMode::Shared)?;
                self.pool.unfix_page(h, false);
            }
            Ok(())
        });
        r?;
        self.reads_before_run
            .store(self.pool.database().device().stats().reads, Ordering::SeqCst);
        Ok(ns)
    }

    /// Creates the replacement volume and the restore context for a
    /// failure at `failure_lsn`. The archive must already cover it.
    pub fn restore_context(&self, failure_lsn: Lsn) -> Result<RestoreContext, HarnessError> {
        let backup = self
            .backup
            .clone()
            .ok_or_else(|| HarnessError::Invariant("failure injected without a backup".into()))?;
        let device = Arc::new(Device::new(
            DeviceRole::Replacement,
            Box::new(MemBackend::with_capacity(self.geometry.volume_bytes() as usize + 64)),
            self.config.timing.data,
            self.config.clock,
        ));
        let replacement = Volume::create_unformatted(device, self.geometry)?;
        *self.replacement.lock() = Some(replacement.clone());
        Ok(RestoreContext {
            backup,
            archive: self.archive.clone(),
            replacement,
            failure_lsn,
            config: RestoreConfig {
                policy: self.config.policy,
                batch_cap: self.config.batch_cap,
                workers: self.config.restore_workers,
                ..Default::default()
            },
        })
    }

    pub fn replacement(&self) -> Option<Volume> {
        self.replacement.lock().clone()
    }

    /// Page reads issued to the database and replacement devices since
    /// warm-up.
    pub fn data_reads(&self) -> u64 {
        let db = self.pool.database().device().stats().reads;
        let rep = self.replacement.lock().as_ref().map_or(0, |v| v.device().stats().reads);
        db + rep - self.reads_before_run.load(Ordering::SeqCst)
    }

    /// The whole log as written so far.
    pub fn wal_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        self.wal.flush_all()?;
        let mut buf = vec![0u8; self.wal.end_lsn().0 as usize];
        self.wal.device().peek_at(0, &mut buf)?;
        Ok(buf)
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }
}
