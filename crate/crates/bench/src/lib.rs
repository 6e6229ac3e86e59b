//! Failure-injecting benchmark harness for segment-wise instant restore.
//!
//! A run builds a database volume, takes a full backup, drives a skewed
//! update workload against the buffer pool while the log archiver runs,
//! fails the database device mid-run and keeps the workload going while
//! the restore manager rebuilds the volume on a replacement device.
//!
//! Two drivers share the same engine: [`sim::simulate`] runs every actor on
//! one thread in virtual time and is fully deterministic, while
//! [`threaded::run_threaded`] uses real threads and, with
//! [`ClockMode::Wall`](segrestore::clock::ClockMode::Wall), real sleeps.

pub mod config;
pub mod csv_out;
pub mod engine;
pub mod metrics;
pub mod overhead;
pub mod sim;
pub mod threaded;
pub mod verify;
pub mod workload;

use std::sync::Arc;

use segrestore::archive::ArchiveError;
use segrestore::backup::BackupError;
use segrestore::restore::{RestoreError, RestoreManager};
use segrestore::storage::StorageError;
use segrestore::wal::WalError;
use segrestore::SegmentId;

pub use config::{ConfigError, DeviceTiming, FailAt, WorkloadConfig};
pub use engine::Engine;
pub use metrics::MetricsReport;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Wal(#[from] WalError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Backup(#[from] BackupError),
    #[error(transparent)]
    Restore(#[from] RestoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invariant(String),
}

/// A finished run together with the engine it ran on, so callers can
/// inspect the final volumes.
pub struct RunOutcome {
    pub report: MetricsReport,
    pub engine: Engine,
    pub restore: Option<Arc<RestoreManager>>,
}

impl std::fmt::Debug for RunOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOutcome").field("engine", &self.engine).finish()
    }
}

pub(crate) fn archive_summary(engine: &Engine) -> metrics::ArchiveSummary {
    let archiver = engine.archiver.lock();
    metrics::ArchiveSummary {
        mode: engine.config.archive_mode,
        archived_upto: archiver.archived_upto().0,
        runs: engine.archive.run_count(),
        bytes_written: engine.archive.stats().bytes_written + archiver.copied_bytes(),
        log_bytes: engine.wal.end_lsn().0,
    }
}

/// Adds the restore summary, checks the run-level invariants and builds
/// the report.
pub(crate) fn finish_report(
    engine: Engine,
    restore: Option<Arc<RestoreManager>>,
    mut raw: metrics::RawRun,
    check_latency: bool,
) -> Result<RunOutcome, HarnessError> {
    if check_latency {
        if let Some(s) = raw.samples.iter().find(|s| s.latency_ns() < s.io_ns) {
            raw.violations.push(format!(
                "transaction {:#x} took {} ns but waited {} ns for I/O",
                s.txn_id,
                s.latency_ns(),
                s.io_ns
            ));
        }
    }
    if let Some(mgr) = &restore {
        let status = mgr.restore_status();
        let volume_bytes = engine.geometry.volume_bytes();
        let repeated: Vec<u64> = (0..status.total).filter(|&s| mgr.execution_count(SegmentId(s)) > 1).collect();
        if !repeated.is_empty() {
            raw.violations.push(format!("segments restored more than once: {repeated:?}"));
        }
        if mgr.is_complete() && status.bytes_restored != volume_bytes {
            raw.violations.push(format!(
                "restore complete but {} of {volume_bytes} bytes restored",
                status.bytes_restored
            ));
        }
        if engine.config.finish_restore && !mgr.is_complete() {
            raw.violations.push(format!(
                "restore stopped at {}/{} segments",
                status.restored_count, status.total
            ));
        }
        raw.restore = Some(metrics::RestoreSummary {
            policy: mgr.policy(),
            started_ns: mgr.started_ns(),
            finished_ns: mgr.finished_ns(),
            batches: mgr.events(),
            bytes_restored: status.bytes_restored,
            volume_bytes,
        });
    }
    Ok(RunOutcome {
        report: MetricsReport::assemble(raw),
        engine,
        restore,
    })
}
