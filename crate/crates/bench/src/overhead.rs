//! Cost of sorting and indexing the log archive, measured against plain
//! copying of log records.

use std::path::Path;

use segrestore::archive::ArchiveMode;

use crate::config::{FailAt, WorkloadConfig};
use crate::metrics::median;
use crate::{threaded, HarnessError};

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadReport {
    /// Median throughput over all measurement windows, sorted and indexed
    /// archive.
    pub sorted_indexed_tps: f64,
    pub plain_copy_tps: f64,
    /// `1 - sorted / copy`.
    pub ratio: f64,
    pub sorted_windows: Vec<f64>,
    pub copy_windows: Vec<f64>,
    pub sorted_runs: usize,
    pub copy_bytes: u64,
}

pub fn overhead_ratio(sorted_tps: f64, copy_tps: f64) -> f64 {
    1.0 - sorted_tps / copy_tps
}

/// Runs the workload without a failure `rounds` times in each archiving
/// mode, alternating modes so that drift in the host affects both alike,
/// and compares median throughput over windows of `window_ns`.
pub fn measure_archiving_overhead(
    config: &WorkloadConfig,
    work_dir: &Path,
    rounds: usize,
    window_ns: u64,
) -> Result<OverheadReport, HarnessError> {
    let mut sorted = Vec::new();
    let mut copy = Vec::new();
    let mut sorted_runs = 0;
    let mut copy_bytes = 0;
    for round in 0..rounds.max(1) {
        for mode in [ArchiveMode::Sorted, ArchiveMode::PlainCopy] {
            let cfg = WorkloadConfig {
                failure: FailAt::Never,
                archive_mode: mode,
                txn_budget: None,
                ..config.clone()
            };
            let dir = work_dir.join(format!("{mode:?}-{round}"));
            let out = threaded::run_threaded(&cfg, &dir)?;
            if !out.report.is_valid() {
                return Err(HarnessError::Invariant(out.report.violations.join("; ")));
            }
            let windows = out.report.throughput_windows(0, out.report.end_ns, window_ns);
            match mode {
                ArchiveMode::Sorted => {
                    sorted.extend(windows);
                    sorted_runs = out.report.archive.runs;
                }
                ArchiveMode::PlainCopy => {
                    copy.extend(windows);
                    copy_bytes = out.report.archive.bytes_written;
                }
            }
            drop(out);
            std::fs::remove_dir_all(&dir)?;
        }
    }
    let sorted_tps = median(&sorted).unwrap_or(0.0);
    let copy_tps = median(&copy).unwrap_or(0.0);
    Ok(OverheadReport {
        sorted_indexed_tps: sorted_tps,
        plain_copy_tps: copy_tps,
        ratio: overhead_ratio(sorted_tps, copy_tps),
        sorted_windows: sorted,
        copy_windows: copy,
        sorted_runs,
        copy_bytes,
    })
}
