//! CSV files written for every run.
//!
//! * `throughput.csv`: `t_sec, txns, mean_latency_us, max_latency_us, page_reads`
//! * `restore.csv`: `t_sec, bytes_restored, batch_size_mean, queue_depth`
//! * `latency_samples.csv`: `txn_id, latency_us, post_failure`

use std::path::Path;
use std::str::FromStr;

use crate::metrics::MetricsReport;
use crate::HarnessError;

pub const THROUGHPUT_FILE: &str = "throughput.csv";
pub const RESTORE_FILE: &str = "restore.csv";
pub const LATENCY_FILE: &str = "latency_samples.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRow {
    pub t_sec: f64,
    pub txns: u64,
    pub mean_latency_us: f64,
    pub max_latency_us: u64,
    pub page_reads: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreRow {
    pub t_sec: f64,
    pub bytes_restored: u64,
    pub batch_size_mean: f64,
    pub queue_depth: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyRow {
    pub txn_id: u64,
    pub latency_us: u64,
    pub post_failure: bool,
}

impl MetricsReport {
    pub fn throughput_rows(&self) -> Vec<ThroughputRow> {
        self.ticks
            .iter()
            .map(|t| ThroughputRow {
                t_sec: t.t_sec,
                txns: t.txns,
                mean_latency_us: t.mean_latency_us,
                max_latency_us: t.max_latency_us,
                page_reads: t.page_reads,
            })
            .collect()
    }

    pub fn restore_rows(&self) -> Vec<RestoreRow> {
        self.ticks
            .iter()
            .map(|t| RestoreRow {
                t_sec: t.t_sec,
                bytes_restored: t.bytes_restored,
                batch_size_mean: t.batch_size_mean,
                queue_depth: t.queue_depth,
            })
            .collect()
    }

    pub fn latency_rows(&self) -> Vec<LatencyRow> {
        self.samples
            .iter()
            .map(|s| LatencyRow {
                txn_id: s.txn_id,
                latency_us: s.latency_ns() / 1_000,
                post_failure: s.post_failure,
            })
            .collect()
    }
}

fn write_file<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the three CSV files into `dir`, creating it if needed.
pub fn emit_csv(report: &MetricsReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_file(
        &dir.join(THROUGHPUT_FILE),
        ["t_sec", "txns", "mean_latency_us", "max_latency_us", "page_reads"],
        report.throughput_rows().into_iter().map(|r| {
            [
                r.t_sec.to_string(),
                r.txns.to_string(),
                r.mean_latency_us.to_string(),
                r.max_latency_us.to_string(),
                r.page_reads.to_string(),
            ]
        }),
    )?;
    write_file(
        &dir.join(RESTORE_FILE),
        ["t_sec", "bytes_restored", "batch_size_mean", "queue_depth"],
        report.restore_rows().into_iter().map(|r| {
            [
                r.t_sec.to_string(),
                r.bytes_restored.to_string(),
                r.batch_size_mean.to_string(),
                r.queue_depth.to_string(),
            ]
        }),
    )?;
    write_file(
        &dir.join(LATENCY_FILE),
        ["txn_id", "latency_us", "post_failure"],
        report
            .latency_rows()
            .into_iter()
            .map(|r| [r.txn_id.to_string(), r.latency_us.to_string(), u8::from(r.post_failure).to_string()]),
    )
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, HarnessError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::Invariant(format!("bad csv field {i} in {rec:?}")))
}

fn read_rows<T>(path: &Path, parse: impl Fn(&csv::StringRecord) -> Result<T, HarnessError>) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|rec| parse(&rec?)).collect()
}

pub fn read_throughput(path: &Path) -> Result<Vec<ThroughputRow>, HarnessError> {
    read_rows(path, |r| {
        Ok(ThroughputRow {
            t_sec: field(r, 0)?,
            txns: field(r, 1)?,
            mean_latency_us: field(r, 2)?,
            max_latency_us: field(r, 3)?,
            page_reads: field(r, 4)?,
        })
    })
}

pub fn read_restore(path: &Path) -> Result<Vec<RestoreRow>, HarnessError> {
    read_rows(path, |r| {
        Ok(RestoreRow {
            t_sec: field(r, 0)?,
            bytes_restored: field(r, 1)?,
            batch_size_mean: field(r, 2)?,
            queue_depth: field(r, 3)?,
        })
    })
}

pub fn read_latency(path: &Path) -> Result<Vec<LatencyRow>, HarnessError> {
    read_rows(path, |r| {
        Ok(LatencyRow {
            txn_id: field(r, 0)?,
            latency_us: field(r, 1)?,
            post_failure: field::<u8>(r, 2)? != 0,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ArchiveSummary, RawRun};
    use segrestore::archive::ArchiveMode;

    fn empty_report() -> MetricsReport {
        MetricsReport::assemble(RawRun {
            tick_ns: 1_000_000_000,
            end_ns: 0,
            failure_ns: None,
            samples: vec![],
            snapshots: vec![],
            restore: None,
            archive: ArchiveSummary {
                mode: ArchiveMode::Sorted,
                archived_upto: 0,
                runs: 0,
                bytes_written: 0,
                log_bytes: 0,
            },
            violations: vec![],
        })
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_csv(&empty_report(), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(THROUGHPUT_FILE)).unwrap();
        assert_eq!(text, "t_sec,txns,mean_latency_us,max_latency_us,page_reads\n");
        let text = std::fs::read_to_string(dir.path().join(RESTORE_FILE)).unwrap();
        assert_eq!(text, "t_sec,bytes_restored,batch_size_mean,queue_depth\n");
        let text = std::fs::read_to_string(dir.path().join(LATENCY_FILE)).unwrap();
        assert_eq!(text, "txn_id,latency_us,post_failure\n");
        assert!(read_throughput(&dir.path().join(THROUGHPUT_FILE)).unwrap().is_empty());
    }
}
