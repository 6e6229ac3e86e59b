//! Benchmark configuration.

use segrestore::archive::ArchiveMode;
use segrestore::clock::{ClockMode, LatencyModel};
use segrestore::restore::RestorePolicy;
use segrestore::storage::page::{CHECKSUM_LEN, PAGE_HEADER_LEN, RECORD_OVERHEAD};
use segrestore::Geometry;

pub const NS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("failure time {failure_s}s must be earlier than the duration {duration_s}s")]
    FailureAfterEnd { failure_s: f64, duration_s: f64 },
    #[error("skew must be a finite value >= 0, got {0}")]
    BadSkew(f64),
    #[error("working set of {hot} pages exceeds the volume of {pages} pages")]
    WorkingSetTooLarge { hot: u64, pages: u64 },
    #[error("pool of {pool} pages cannot give each of {workers} workers a frame")]
    PoolTooSmall { pool: usize, workers: usize },
    #[error("{keys} keys of {value_len} bytes do not fit into a {page_size}-byte page")]
    PageTooSmall {
        keys: u64,
        value_len: usize,
        page_size: usize,
    },
    #[error("delete ratio must lie in [0, 1], got {0}")]
    BadDeleteRatio(f64),
}

/// When the database device fails.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FailAt {
    Never,
    /// Nanoseconds after the workload starts.
    Time(u64),
    /// As soon as this many transactions have committed.
    AfterTxns(u64),
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DeviceTiming {
    /// Database, replacement and backup devices.
    pub data: LatencyModel,
    pub log: LatencyModel,
    pub archive: LatencyModel,
}

impl DeviceTiming {
    pub const ZERO: DeviceTiming = DeviceTiming {
        data: LatencyModel::ZERO,
        log: LatencyModel::ZERO,
        archive: LatencyModel::ZERO,
    };
}

impl Default for DeviceTiming {
    fn default() -> Self {
        DeviceTiming {
            data: LatencyModel::new(200, 12.0),
            log: LatencyModel::new(20, 1.0),
            archive: LatencyModel::new(100, 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub page_count: u64,
    pub page_size: usize,
    pub pages_per_segment: u64,
    pub pool_pages: usize,
    pub workers: usize,
    /// Each transaction performs between 1 and this many updates.
    pub max_ops_per_txn: usize,
    /// Zipf exponent over the working set; 0 is uniform.
    pub skew: f64,
    /// Pages the workload touches. They are spread over the whole volume.
    pub hot_pages: u64,
    /// Contiguous pages that hold consecutive popularity ranks.
    pub extent_pages: u64,
    pub duration_ns: u64,
    pub failure: FailAt,
    pub policy: RestorePolicy,
    pub batch_cap: u64,
    pub restore_workers: usize,
    pub run_size_limit: usize,
    pub fan_in: usize,
    pub archive_mode: ArchiveMode,
    pub seed: u64,
    pub clock: ClockMode,
    pub timing: DeviceTiming,
    /// Simulated processing time of one update.
    pub cpu_ns_per_op: u64,
    /// Transactions per worker; `None` runs until the duration ends.
    pub txn_budget: Option<u64>,
    pub keys_per_worker: u32,
    pub value_len: usize,
    pub delete_ratio: f64,
    pub archive_interval_ns: u64,
    pub tick_ns: u64,
    /// Keep restoring after the workload ends until every segment is
    /// restored (on-demand restore requests the remaining ones).
    pub finish_restore: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            page_count: 32_768,
            page_size: 8192,
            pages_per_segment: 128,
            pool_pages: 8192,
            workers: 4,
            max_ops_per_txn: 8,
            skew: 0.8,
            hot_pages: 16_384,
            extent_pages: 128,
            duration_ns: 30 * NS_PER_SEC,
            failure: FailAt::Time(10 * NS_PER_SEC),
            policy: RestorePolicy::Preemptive,
            batch_cap: 64,
            restore_workers: 1,
            run_size_limit: 4096,
            fan_in: 8,
            archive_mode: ArchiveMode::Sorted,
            seed: 42,
            clock: ClockMode::Virtual,
            timing: DeviceTiming::default(),
            cpu_ns_per_op: 250_000,
            txn_budget: None,
            keys_per_worker: 4,
            value_len: 16,
            delete_ratio: 0.1,
            archive_interval_ns: 100_000_000,
            tick_ns: NS_PER_SEC,
            finish_restore: false,
        }
    }
}

impl WorkloadConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.page_size, self.page_count, self.pages_per_segment)
    }

    pub fn failure_ns(&self) -> Option<u64> {
        match self.failure {
            FailAt::Time(t) => Some(t),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("page_count", self.page_count > 0),
            ("page_size", self.page_size > 0),
            ("pages_per_segment", self.pages_per_segment > 0),
            ("pool_pages", self.pool_pages > 0),
            ("workers", self.workers > 0),
            ("max_ops_per_txn", self.max_ops_per_txn > 0),
            ("hot_pages", self.hot_pages > 0),
            ("extent_pages", self.extent_pages > 0),
            ("duration", self.duration_ns > 0),
            ("batch_cap", self.batch_cap > 0),
            ("restore_workers", self.restore_workers > 0),
            ("run_size_limit", self.run_size_limit > 0),
            ("fan_in", self.fan_in > 1),
            ("keys_per_worker", self.keys_per_worker > 0),
            ("archive_interval", self.archive_interval_ns > 0),
            ("tick", self.tick_ns > 0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(ConfigError::NotPositive(name));
        }
        if let FailAt::Time(t) = self.failure {
            if t >= self.duration_ns {
                return Err(ConfigError::FailureAfterEnd {
                    failure_s: t as f64 / NS_PER_SEC as f64,
                    duration_s: self.duration_ns as f64 / NS_PER_SEC as f64,
                });
            }
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(ConfigError::BadSkew(self.skew));
        }
        if !(0.0..=1.0).contains(&self.delete_ratio) {
            return Err(ConfigError::BadDeleteRatio(self.delete_ratio));
        }
        if self.hot_pages > self.page_count {
            return Err(ConfigError::WorkingSetTooLarge {
                hot: self.hot_pages,
                pages: self.page_count,
            });
        }
        if self.pool_pages < self.workers {
            return Err(ConfigError::PoolTooSmall {
                pool: self.pool_pages,
                workers: self.workers,
            });
        }
        let keys = self.workers as u64 * self.keys_per_worker as u64;
        let full = PAGE_HEADER_LEN as u64 + keys * (RECORD_OVERHEAD + self.value_len) as u64 + CHECKSUM_LEN as u64;
        if full > self.page_size as u64 {
            return Err(ConfigError::PageTooSmall {
                keys,
                value_len: self.value_len,
                page_size: self.page_size,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        WorkloadConfig::default().validate().unwrap();
        assert_eq!(WorkloadConfig::default().geometry().volume_bytes(), 256 << 20);
    }

    #[test]
    fn failure_after_duration_is_rejected() {
        let cfg = WorkloadConfig {
            duration_ns: 5 * NS_PER_SEC,
            failure: FailAt::Time(8 * NS_PER_SEC),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::FailureAfterEnd { .. })));
        let cfg = WorkloadConfig {
            failure: FailAt::Time(cfg.duration_ns),
            ..cfg
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_sizes_are_rejected() {
        let cfg = WorkloadConfig {
            pool_pages: 0,
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(ConfigError::NotPositive("pool_pages")));
    }

    #[test]
    fn keys_must_fit_a_page() {
        let cfg = WorkloadConfig {
            page_size: 256,
            workers: 8,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::PageTooSmall { .. })));
    }

    #[test]
    fn negative_skew_is_rejected() {
        let cfg = WorkloadConfig {
            skew: -0.5,
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(ConfigError::BadSkew(-0.5)));
    }
}
