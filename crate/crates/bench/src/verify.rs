//! End-to-end correctness checks.
//!
//! A run with a failure is compared against two independent references:
//!
//! * the brute-force image: every backup page with all logged updates at or
//!   above the backup's `min_lsn` folded in, in log order;
//! * a shadow run of the same workload and seed without a failure, compared
//!   by content (keys and values), since timing and therefore LSNs differ.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use segrestore::backup::BackupImage;
use segrestore::clock::ClockMode;
use segrestore::restore::RestorePolicy;
use segrestore::storage::Page;
use segrestore::wal::{LogOp, Wal};
use segrestore::{Geometry, Lsn, PageId};

use crate::config::{DeviceTiming, FailAt, WorkloadConfig, NS_PER_SEC};
use crate::{sim, threaded, HarnessError, RunOutcome};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Driver {
    Simulated,
    Threaded,
}

pub fn run(config: &WorkloadConfig, work_dir: &Path, driver: Driver) -> Result<RunOutcome, HarnessError> {
    match driver {
        Driver::Simulated => sim::simulate(config, work_dir),
        Driver::Threaded => threaded::run_threaded(config, work_dir),
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub pages: u64,
    pub committed: u64,
    pub failure_injected: bool,
    pub restore_complete: bool,
    /// Pages whose restored bytes differ from the brute-force image.
    pub byte_mismatches: Vec<PageId>,
    /// Pages whose restored content differs from the shadow run.
    pub logical_mismatches: Vec<PageId>,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failure_injected
            && self.restore_complete
            && self.byte_mismatches.is_empty()
            && self.logical_mismatches.is_empty()
            && self.violations.is_empty()
    }
}

pub type Content = BTreeMap<u32, Vec<u8>>;

/// Backup pages with every update at or above `min_lsn` applied in log
/// order. Reads both sources without simulated latency.
pub fn brute_force_image(backup: &BackupImage, wal: &Wal) -> Result<Vec<Page>, HarnessError> {
    let g = backup.geometry();
    let raw = backup.pages().peek_image()?;
    let mut pages = decode_image(&raw, g)?;
    wal.flush_all()?;
    let mut last = Lsn::NULL;
    for rec in wal.scan(Lsn::NULL) {
        let rec = rec?;
        if rec.lsn <= last {
            return Err(HarnessError::Invariant(format!("log out of order at {}", rec.lsn)));
        }
        last = rec.lsn;
        if rec.lsn < backup.min_lsn() {
            continue;
        }
        let page = &mut pages[rec.page_id.0 as usize];
        match &rec.op {
            LogOp::Set { key, value } => {
                page.records.insert(*key, value.clone());
            }
            LogOp::Delete { key } => {
                page.records.remove(key);
            }
        }
        page.lsn = rec.lsn;
    }
    Ok(pages)
}

pub fn decode_image(raw: &[u8], g: Geometry) -> Result<Vec<Page>, HarnessError> {
    raw.chunks_exact(g.page_size)
        .enumerate()
        .map(|(i, img)| Ok(Page::decode_for(PageId(i as u64), img).map_err(segrestore::storage::StorageError::from)?))
        .collect()
}

fn contents(pages: Vec<Page>) -> Vec<Content> {
    pages.into_iter().map(|p| p.records).collect()
}

/// Flushes the pool and returns the content of every page on the volume
/// that currently holds the database.
pub fn final_content(outcome: &RunOutcome) -> Result<Vec<Content>, HarnessError> {
    let engine = &outcome.engine;
    engine.pool.flush_all()?;
    let raw = engine.pool.live_volume().pages().peek_image()?;
    Ok(contents(decode_image(&raw, engine.geometry)?))
}

/// Runs `config` with its failure and a shadow run without one, and
/// compares the restored volume with both references.
pub fn verify(config: &WorkloadConfig, work_dir: &Path, driver: Driver) -> Result<VerifyReport, HarnessError> {
    if config.txn_budget.is_none() {
        return Err(HarnessError::Invariant("verification needs a per-worker transaction budget".into()));
    }
    let shadow_cfg = WorkloadConfig {
        failure: FailAt::Never,
        ..config.clone()
    };
    let failed_cfg = WorkloadConfig {
        finish_restore: true,
        ..config.clone()
    };

    let shadow = run(&shadow_cfg, &work_dir.join("shadow"), driver)?;
    let expected = final_content(&shadow)?;
    drop(shadow);

    let out = run(&failed_cfg, &work_dir.join("failure"), driver)?;
    let mut report = VerifyReport {
        pages: out.engine.geometry.page_count,
        committed: out.report.committed(),
        failure_injected: out.report.failure_ns.is_some(),
        restore_complete: out.restore.as_ref().is_some_and(|m| m.is_complete()),
        violations: out.report.violations.clone(),
        ..Default::default()
    };
    if !report.failure_injected || !report.restore_complete {
        return Ok(report);
    }
    out.engine.pool.flush_all()?;
    let replacement = out.engine.replacement().expect("replacement volume");
    let restored = replacement.pages().peek_image()?;
    let backup = out.engine.backup.as_ref().expect("backup");
    let oracle = brute_force_image(backup, &out.engine.wal)?;
    let ps = out.engine.geometry.page_size;
    for (i, (img, page)) in restored.chunks_exact(ps).zip(&oracle).enumerate() {
        let encoded = page.encode(ps).map_err(segrestore::storage::StorageError::from)?;
        if img != encoded.as_slice() {
            report.byte_mismatches.push(PageId(i as u64));
        }
    }
    let actual = contents(decode_image(&restored, out.engine.geometry)?);
    for (i, (a, e)) in actual.iter().zip(&expected).enumerate() {
        if a != e {
            report.logical_mismatches.push(PageId(i as u64));
        }
    }
    Ok(report)
}

/// A randomized small configuration for correctness runs. Page counts are
/// drawn log-uniformly from `[64, 16384]`.
pub fn random_config<R: Rng + ?Sized>(rng: &mut R, seed: u64) -> WorkloadConfig {
    let policies = [
        RestorePolicy::OnDemandOnly,
        RestorePolicy::Preemptive,
        RestorePolicy::SinglePassOnly,
    ];
    let page_count = 2f64.powf(rng.random_range(6.0..=14.0)).round() as u64;
    let pages_per_segment = [1u64, 8, 128][rng.random_range(0..3)];
    let workers = rng.random_range(2..=4);
    let budget = rng.random_range(20..=120u64);
    let hot_pages = rng.random_range(page_count / 4..=page_count).max(1);
    let pool_pages = rng.random_range(workers as u64..=(hot_pages / 2).max(workers as u64 + 1)) as usize;
    WorkloadConfig {
        page_count,
        page_size: 512,
        pages_per_segment,
        pool_pages,
        workers,
        max_ops_per_txn: 8,
        skew: rng.random_range(0.0..1.2),
        hot_pages,
        extent_pages: [1u64, 8, 128][rng.random_range(0..3)],
        duration_ns: 3_600 * NS_PER_SEC,
        failure: FailAt::AfterTxns(rng.random_range(1..budget * workers as u64)),
        policy: policies[rng.random_range(0..3)],
        batch_cap: [1u64, 4, 64][rng.random_range(0..3)],
        restore_workers: 1,
        run_size_limit: rng.random_range(16..=512),
        fan_in: rng.random_range(2..=8),
        seed,
        clock: ClockMode::Virtual,
        timing: DeviceTiming::default(),
        cpu_ns_per_op: 50_000,
        txn_budget: Some(budget),
        keys_per_worker: 4,
        value_len: 12,
        archive_interval_ns: 20_000_000,
        finish_restore: true,
        ..WorkloadConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_configs_are_valid() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        for i in 0..500 {
            let cfg = random_config(&mut rng, i);
            cfg.validate().unwrap();
            assert!((64..=16_384).contains(&cfg.page_count));
        }
    }
}
