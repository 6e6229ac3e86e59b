//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use segrestore::archive::{ArchiveConfig, ArchiveDir, ArchiverConfig, LogArchiver, RunFile};
use segrestore::backup::{BackupImage, BackupTarget};
use segrestore::storage::{BufferPool, Device, DeviceRole, FixMode, Page, Volume};
use segrestore::wal::{LogOp, LogRecord, Wal, WalConfig};
use segrestore::{Geometry, Lsn, PageId};

pub const KEYS_PER_PAGE: u32 = 6;
pub const VALUE_LEN: usize = 8;

pub struct Fixture {
    pub geometry: Geometry,
    pub pool: BufferPool,
    pub wal: Arc<Wal>,
    pub archiver: LogArchiver,
    pub backup: BackupImage,
}

impl Fixture {
    /// Formatted database, backup taken before any update.
    pub fn new(archive_dir: &Path, geometry: Geometry, frames: usize, run_size_limit: usize) -> Fixture {
        let db = Volume::create(Arc::new(Device::in_memory(DeviceRole::Database)), geometry).unwrap();
        let wal = Arc::new(Wal::create(Arc::new(Device::in_memory(DeviceRole::Log)), WalConfig::default()).unwrap());
        let pool = BufferPool::new(db, wal.clone(), frames);
        let backup = BackupImage::take_full_backup(
            &pool,
            BackupTarget::Device(Arc::new(Device::in_memory(DeviceRole::Backup))),
        )
        .unwrap();
        let dir = Arc::new(ArchiveDir::open(archive_dir, ArchiveConfig::default()).unwrap());
        let archiver = LogArchiver::new(
            wal.clone(),
            dir,
            ArchiverConfig {
                run_size_limit,
                ..ArchiverConfig::default()
            },
        );
        Fixture {
            geometry,
            pool,
            wal,
            archiver,
            backup,
        }
    }

    pub fn replacement(&self) -> Volume {
        Volume::create_unformatted(Arc::new(Device::in_memory(DeviceRole::Replacement)), self.geometry).unwrap()
    }
}

pub fn random_op(rng: &mut StdRng) -> LogOp {
    let key = rng.random_range(0..KEYS_PER_PAGE);
    if rng.random_bool(0.15) {
        LogOp::Delete { key }
    } else {
        LogOp::Set {
            key,
            value: (0..VALUE_LEN).map(|_| rng.random()).collect(),
        }
    }
}

/// Applies `n` random single-op updates through the pool, archiving as it
/// goes.
pub fn random_updates(fx: &mut Fixture, rng: &mut StdRng, n: usize) {
    for i in 0..n {
        let page = PageId(rng.random_range(0..fx.geometry.page_count));
        let mut h = fx.pool.fix_page(page, FixMode::Exclusive).unwrap();
        h.apply_logged(i as u64, random_op(rng)).unwrap();
        drop(h);
        if i % 50 == 0 {
            fx.archiver.archive_step(37).unwrap();
        }
    }
}

/// Backup image plus every durable log record at or above its `min_lsn`,
/// applied in LSN order with no page-LSN gating.
pub fn oracle_image(backup: &BackupImage, wal: &Wal) -> Vec<Page> {
    let g = backup.geometry();
    let mut pages: Vec<Page> = (0..g.page_count).map(|p| backup.fetch_page(PageId(p)).unwrap()).collect();
    for rec in wal.scan(Lsn(0)) {
        let rec = rec.unwrap();
        if rec.lsn < backup.min_lsn() {
            continue;
        }
        let page = &mut pages[rec.page_id.0 as usize];
        page.apply_op(&rec.op);
        page.lsn = rec.lsn;
    }
    pages
}

pub fn encode_pages(pages: &[Page], page_size: usize) -> Vec<u8> {
    pages.iter().flat_map(|p| p.encode(page_size).unwrap()).collect()
}

/// Linear scan of every run, filtered and sorted.
pub fn probe_oracle(runs: &[Arc<RunFile>], first: PageId, last: PageId, min_lsn: Lsn) -> Vec<LogRecord> {
    let mut out: Vec<LogRecord> = runs
        .iter()
        .flat_map(|r| r.read_all().unwrap())
        .filter(|r| r.page_id >= first && r.page_id <= last && r.lsn >= min_lsn)
        .collect();
    out.sort_by_key(|r| (r.page_id, r.lsn));
    out
}

/// Logical content of pages: page id to key/value map.
pub fn logical(pages: &[Page]) -> BTreeMap<PageId, BTreeMap<u32, Vec<u8>>> {
    pages.iter().map(|p| (p.id, p.records.clone())).collect()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
