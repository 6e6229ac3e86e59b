//! Run measurements and the statistics derived from them.

use segrestore::archive::ArchiveMode;
use segrestore::restore::{BatchEvent, RestorePolicy};

use crate::config::NS_PER_SEC;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TxnSample {
    pub txn_id: u64,
    pub start_ns: u64,
    pub commit_ns: u64,
    /// Simulated device time charged while the transaction ran.
    pub io_ns: u64,
    pub post_failure: bool,
}

impl TxnSample {
    pub fn latency_ns(&self) -> u64 {
        self.commit_ns - self.start_ns
    }
}

/// Counters read at the end of a tick.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct TickSnapshot {
    pub at_ns: u64,
    pub page_reads: u64,
    pub bytes_restored: u64,
    pub queue_depth: u64,
}

/// One row per tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRow {
    pub t_sec: f64,
    pub txns: u64,
    pub mean_latency_us: f64,
    pub max_latency_us: u64,
    /// Reads issued during the tick.
    pub page_reads: u64,
    /// Total restored so far.
    pub bytes_restored: u64,
    /// Mean size in segments of the batches that completed during the tick.
    pub batch_size_mean: f64,
    pub queue_depth: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreSummary {
    pub policy: RestorePolicy,
    pub started_ns: u64,
    pub finished_ns: Option<u64>,
    pub batches: Vec<BatchEvent>,
    pub bytes_restored: u64,
    pub volume_bytes: u64,
}

impl RestoreSummary {
    pub fn duration_ns(&self) -> Option<u64> {
        self.finished_ns.map(|f| f - self.started_ns)
    }

    /// Bytes restored per second over `[from, to)`, crediting each batch
    /// pro rata for the part of its execution that falls in the interval.
    pub fn bandwidth(&self, from: u64, to: u64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let bytes: f64 = self
            .batches
            .iter()
            .map(|b| {
                let span = b.finished_ns.saturating_sub(b.started_ns);
                if span == 0 {
                    return if (from..to).contains(&b.finished_ns) { b.bytes as f64 } else { 0.0 };
                }
                b.bytes as f64 * overlap(b.started_ns, b.finished_ns, from, to) as f64 / span as f64
            })
            .sum();
        bytes / ((to - from) as f64 / NS_PER_SEC as f64)
    }

    /// Bandwidth from restore start to completion.
    pub fn overall_bandwidth(&self) -> Option<f64> {
        self.finished_ns.map(|end| self.bandwidth(self.started_ns, end))
    }

    /// Mean batch size (segments) in each quarter of the recovery period,
    /// weighting every batch by how long it executed inside the quarter.
    pub fn quartile_batch_means(&self) -> Option<[f64; 4]> {
        let end = self.finished_ns?;
        let q = self.quartile_bounds(end);
        let mut out = [0.0; 4];
        for (i, (lo, hi)) in q.iter().enumerate() {
            let (mut weighted, mut time) = (0.0, 0.0);
            for b in &self.batches {
                let w = overlap(b.started_ns, b.finished_ns, *lo, *hi) as f64;
                weighted += w * b.batch.count as f64;
                time += w;
            }
            out[i] = if time > 0.0 { weighted / time } else { 0.0 };
        }
        Some(out)
    }

    pub fn quartile_bandwidths(&self) -> Option<[f64; 4]> {
        let end = self.finished_ns?;
        let q = self.quartile_bounds(end);
        Some(q.map(|(lo, hi)| self.bandwidth(lo, hi)))
    }

    fn quartile_bounds(&self, end: u64) -> [(u64, u64); 4] {
        let start = self.started_ns;
        let at = |k: u64| start + (end - start) * k / 4;
        [(at(0), at(1)), (at(1), at(2)), (at(2), at(3)), (at(3), at(4))]
    }
}

fn overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
    a1.min(b1).saturating_sub(a0.max(b0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveSummary {
    pub mode: ArchiveMode,
    pub archived_upto: u64,
    pub runs: usize,
    pub bytes_written: u64,
    pub log_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub tick_ns: u64,
    /// End of the measured interval: the duration, or the last commit when
    /// the run was bounded by a transaction budget.
    pub end_ns: u64,
    pub failure_ns: Option<u64>,
    pub ticks: Vec<TickRow>,
    pub samples: Vec<TxnSample>,
    pub restore: Option<RestoreSummary>,
    pub archive: ArchiveSummary,
    pub violations: Vec<String>,
}

/// Raw measurements a driver hands to [`MetricsReport::assemble`].
#[derive(Clone, Debug)]
pub struct RawRun {
    pub tick_ns: u64,
    pub end_ns: u64,
    pub failure_ns: Option<u64>,
    pub samples: Vec<TxnSample>,
    pub snapshots: Vec<TickSnapshot>,
    pub restore: Option<RestoreSummary>,
    pub archive: ArchiveSummary,
    pub violations: Vec<String>,
}

impl MetricsReport {
    pub fn assemble(mut raw: RawRun) -> MetricsReport {
        raw.samples.sort_by_key(|s| (s.commit_ns, s.txn_id));
        raw.snapshots.sort_by_key(|s| s.at_ns);
        let tick = raw.tick_ns;
        let n = raw.end_ns.div_ceil(tick) as usize;
        let mut rows: Vec<TickRow> = (0..n)
            .map(|i| TickRow {
                t_sec: (i as u64 * tick) as f64 / NS_PER_SEC as f64,
                txns: 0,
                mean_latency_us: 0.0,
                max_latency_us: 0,
                page_reads: 0,
                bytes_restored: 0,
                batch_size_mean: 0.0,
                queue_depth: 0,
            })
            .collect();

        let mut lat_sum = vec![0u64; n];
        for s in &raw.samples {
            let i = (s.commit_ns / tick) as usize;
            if i >= n {
                continue;
            }
            let us = s.latency_ns() / 1_000;
            rows[i].txns += 1;
            rows[i].max_latency_us = rows[i].max_latency_us.max(us);
            lat_sum[i] += us;
        }
        for (row, sum) in rows.iter_mut().zip(lat_sum) {
            if row.txns > 0 {
                row.mean_latency_us = sum as f64 / row.txns as f64;
            }
        }

        // Counters are cumulative; each row takes the latest snapshot taken
        // by the end of its tick.
        let mut prev_reads = 0;
        let mut latest = TickSnapshot::default();
        let mut snaps = raw.snapshots.iter().peekable();
        for (i, row) in rows.iter_mut().enumerate() {
            let end = (i as u64 + 1) * tick;
            while let Some(s) = snaps.next_if(|s| s.at_ns <= end) {
                latest = *s;
            }
            row.page_reads = latest.page_reads - prev_reads;
            prev_reads = latest.page_reads;
            row.bytes_restored = latest.bytes_restored;
            row.queue_depth = latest.queue_depth;
        }

        if let Some(r) = &raw.restore {
            let mut sizes = vec![(0u64, 0u64); n];
            for b in &r.batches {
                let i = (b.finished_ns / tick) as usize;
                if i < n {
                    sizes[i].0 += b.batch.count;
                    sizes[i].1 += 1;
                }
            }
            for (row, (sum, cnt)) in rows.iter_mut().zip(sizes) {
                if cnt > 0 {
                    row.batch_size_mean = sum as f64 / cnt as f64;
                }
            }
        }

        MetricsReport {
            tick_ns: tick,
            end_ns: raw.end_ns,
            failure_ns: raw.failure_ns,
            ticks: rows,
            samples: raw.samples,
            restore: raw.restore,
            archive: raw.archive,
            violations: raw.violations,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn committed(&self) -> u64 {
        self.samples.len() as u64
    }

    /// Committed transactions per second in consecutive windows of
    /// `window_ns` covering `[from, to)`. A trailing partial window is
    /// dropped.
    pub fn throughput_windows(&self, from: u64, to: u64, window_ns: u64) -> Vec<f64> {
        let n = (to.saturating_sub(from) / window_ns) as usize;
        let mut counts = vec![0u64; n];
        for s in &self.samples {
            if s.commit_ns >= from {
                let i = ((s.commit_ns - from) / window_ns) as usize;
                if i < n {
                    counts[i] += 1;
                }
            }
        }
        let secs = window_ns as f64 / NS_PER_SEC as f64;
        counts.into_iter().map(|c| c as f64 / secs).collect()
    }

    /// Latencies of transactions that committed after the failure, sorted.
    pub fn post_failure_latencies(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.samples.iter().filter(|s| s.post_failure).map(|s| s.latency_ns()).collect();
        v.sort_unstable();
        v
    }

    pub fn pre_failure_latencies(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.samples.iter().filter(|s| !s.post_failure).map(|s| s.latency_ns()).collect();
        v.sort_unstable();
        v
    }

    /// Throughput recovery after the failure, measured in windows of
    /// `window_ns`. The reference is the mean over the second half of the
    /// time before the failure, after the pool has reached steady state.
    pub fn regain(&self, window_ns: u64) -> Option<Regain> {
        let fail = self.failure_ns?;
        let pre = self.throughput_windows(fail / 2, fail, window_ns);
        let post = self.throughput_windows(fail, self.end_ns, window_ns);
        if pre.is_empty() || post.is_empty() {
            return None;
        }
        let pre_mean = pre.iter().sum::<f64>() / pre.len() as f64;
        let threshold = 0.9 * pre_mean;
        let regain_windows = post.iter().rposition(|&t| t < threshold).map_or(0, |i| i + 1);
        let min_post = post.iter().copied().fold(f64::INFINITY, f64::min);
        Some(Regain {
            pre_failure_tps: pre_mean,
            regain_ns: regain_windows as u64 * window_ns,
            dip: (1.0 - min_post / pre_mean).max(0.0),
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Regain {
    pub pre_failure_tps: f64,
    /// Time after the failure until throughput stays at or above 90% of
    /// the pre-failure mean.
    pub regain_ns: u64,
    /// Relative drop of the worst post-failure window.
    pub dip: f64,
}

/// Nearest-rank percentile of sorted values; `p` in `[0, 100]`.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

pub fn mean(values: &[u64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<u64>() as f64 / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use segrestore::restore::Batch;
    use segrestore::SegmentId;

    fn event(first: u64, count: u64, start: u64, end: u64) -> BatchEvent {
        BatchEvent {
            batch: Batch {
                first: SegmentId(first),
                count,
                demand: false,
            },
            bytes: count * 100,
            started_ns: start,
            finished_ns: end,
        }
    }

    fn summary(batches: Vec<BatchEvent>) -> RestoreSummary {
        RestoreSummary {
            policy: RestorePolicy::Preemptive,
            started_ns: 0,
            finished_ns: batches.last().map(|b| b.finished_ns),
            bytes_restored: batches.iter().map(|b| b.bytes).sum(),
            volume_bytes: 0,
            batches,
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&v, 0.0), Some(1));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }

    #[test]
    fn bandwidth_is_pro_rata() {
        let s = summary(vec![event(0, 1, 0, NS_PER_SEC), event(1, 3, NS_PER_SEC, 2 * NS_PER_SEC)]);
        assert_eq!(s.bandwidth(0, NS_PER_SEC), 100.0);
        assert_eq!(s.bandwidth(NS_PER_SEC / 2, 3 * NS_PER_SEC / 2), 200.0);
        assert_eq!(s.overall_bandwidth(), Some(200.0));
    }

    #[test]
    fn quartile_means_weight_by_time() {
        // 1-segment batches for the first half, one 8-segment batch for the rest.
        let s = summary(vec![event(0, 1, 0, 10), event(1, 1, 10, 20), event(2, 8, 20, 40)]);
        assert_eq!(s.quartile_batch_means(), Some([1.0, 1.0, 8.0, 8.0]));
    }

    #[test]
    fn assemble_buckets_by_commit_time() {
        let raw = RawRun {
            tick_ns: NS_PER_SEC,
            end_ns: 3 * NS_PER_SEC,
            failure_ns: Some(NS_PER_SEC),
            samples: vec![
                TxnSample {
                    txn_id: 1,
                    start_ns: 0,
                    commit_ns: 500_000,
                    io_ns: 0,
                    post_failure: false,
                },
                TxnSample {
                    txn_id: 2,
                    start_ns: NS_PER_SEC,
                    commit_ns: NS_PER_SEC + 3_000,
                    io_ns: 0,
                    post_failure: true,
                },
                TxnSample {
                    txn_id: 3,
                    start_ns: NS_PER_SEC,
                    commit_ns: NS_PER_SEC + 1_000,
                    io_ns: 0,
                    post_failure: true,
                },
            ],
            snapshots: vec![
                TickSnapshot {
                    at_ns: NS_PER_SEC,
                    page_reads: 5,
                    bytes_restored: 0,
                    queue_depth: 0,
                },
                TickSnapshot {
                    at_ns: 2 * NS_PER_SEC,
                    page_reads: 9,
                    bytes_restored: 300,
                    queue_depth: 2,
                },
            ],
            restore: Some(summary(vec![event(0, 2, NS_PER_SEC, NS_PER_SEC + 10), event(2, 4, NS_PER_SEC + 10, NS_PER_SEC + 20)])),
            archive: ArchiveSummary {
                mode: ArchiveMode::Sorted,
                archived_upto: 0,
                runs: 0,
                bytes_written: 0,
                log_bytes: 0,
            },
            violations: vec![],
        };
        let r = MetricsReport::assemble(raw);
        assert_eq!(r.ticks.len(), 3);
        assert_eq!(r.ticks.iter().map(|t| t.txns).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(r.ticks[1].mean_latency_us, 2.0);
        assert_eq!(r.ticks[1].max_latency_us, 3);
        assert_eq!(r.ticks.iter().map(|t| t.page_reads).collect::<Vec<_>>(), vec![5, 4, 0]);
        assert_eq!(r.ticks[1].bytes_restored, 300);
        assert_eq!(r.ticks[2].bytes_restored, 300);
        assert_eq!(r.ticks[1].batch_size_mean, 3.0);
        assert_eq!(r.post_failure_latencies(), vec![1_000, 3_000]);
    }

    #[test]
    fn regain_finds_last_slow_window() {
        let mut samples = Vec::new();
        let mut id = 0;
        // 10 txns per window before the failure at window 4; windows 4..6
        // are slow, then back to normal.
        for w in 0..10u64 {
            let n = if (4..6).contains(&w) { 2 } else { 10 };
            for k in 0..n {
                id += 1;
                let t = w * 100 + k;
                samples.push(TxnSample {
                    txn_id: id,
                    start_ns: t,
                    commit_ns: t,
                    io_ns: 0,
                    post_failure: w >= 4,
                });
            }
        }
        let r = MetricsReport {
            tick_ns: 100,
            end_ns: 1000,
            failure_ns: Some(400),
            ticks: vec![],
            samples,
            restore: None,
            archive: ArchiveSummary {
                mode: ArchiveMode::Sorted,
                archived_upto: 0,
                runs: 0,
                bytes_written: 0,
                log_bytes: 0,
            },
            violations: vec![],
        };
        let g = r.regain(100).unwrap();
        assert_eq!(g.regain_ns, 200);
        assert!((g.dip - 0.8).abs() < 1e-9);
    }
}
