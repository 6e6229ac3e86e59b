//! Full backups with direct access to every segment.
//!
//! A backup file is `[b"SGBK1"][min_lsn u64][page_size u32][page_count u64]
//! [pages_per_segment u32]` followed by the raw page images, so segment `k`
//! sits at a computable offset. Every update with `lsn >= min_lsn` is
//! missing from the image and every page in it has `page_lsn < min_lsn`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::clock::{ClockMode, LatencyModel};
use crate::storage::{
    BufferPool, Device, DeviceRole, FileBackend, Page, PageFile, StorageError, Volume,
};
use crate::types::{Geometry, Lsn, PageId, SegmentId};
use crate::wal::WalError;

pub const BACKUP_MAGIC: &[u8; 5] = b"SGBK1";
pub const BACKUP_HEADER_LEN: usize = 5 + 8 + 4 + 8 + 4;

#[derive(Debug, thiserror::Error)]
pub enum BackupError {
    #[error(transparent)]
    Storage(#[from] StorageError),

    #[error("backup io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wal(#[from] WalError),

    #[error("bad backup header")]
    BadHeader,

    #[error("invalid {0}")]
    InvalidSegment(SegmentId),

    #[error("injected crash before the backup was renamed into place")]
    InjectedCrash,
}

pub fn backup_file_name(min_lsn: Lsn) -> String {
    format!("backup_{}.img", min_lsn.0)
}

fn encode_header(min_lsn: Lsn, g: &Geometry) -> Vec<u8> {
    let mut out = Vec::with_capacity(BACKUP_HEADER_LEN);
    out.extend_from_slice(BACKUP_MAGIC);
    out.extend_from_slice(&min_lsn.0.to_le_bytes());
    out.extend_from_slice(&(g.page_size as u32).to_le_bytes());
    out.extend_from_slice(&g.page_count.to_le_bytes());
    out.extend_from_slice(&(g.pages_per_segment as u32).to_le_bytes());
    out
}

fn decode_header(buf: &[u8]) -> Result<(Lsn, Geometry), BackupError> {
    if buf.len() < BACKUP_HEADER_LEN || &buf[..5] != BACKUP_MAGIC {
        return Err(BackupError::BadHeader);
    }
    let min_lsn = Lsn(u64::from_le_bytes(buf[5..13].try_into().unwrap()));
    let page_size = u32::from_le_bytes(buf[13..17].try_into().unwrap()) as usize;
    let page_count = u64::from_le_bytes(buf[17..25].try_into().unwrap());
    let pps = u32::from_le_bytes(buf[25..29].try_into().unwrap()) as u64;
    if page_size == 0 || page_count == 0 || pps == 0 {
        return Err(BackupError::BadHeader);
    }
    Ok((min_lsn, Geometry::new(page_size, page_count, pps)))
}

/// Where a backup is written.
pub enum BackupTarget<'a> {
    /// A directory; the image is published as `backup_<min_lsn>.img`.
    Dir {
        path: &'a Path,
        latency: LatencyModel,
        mode: ClockMode,
    },
    /// An in-memory device.
    Device(Arc<Device>),
}

#[derive(Debug, Clone)]
pub struct BackupImage {
    min_lsn: Lsn,
    pages: PageFile,
    path: Option<PathBuf>,
}

impl BackupImage {
    /// Copies every page of the database. Must be called while no
    /// transactions run: the pool is flushed, the log is forced, and
    /// `min_lsn` is the durable end of the log at the start of the copy.
    pub fn take_full_backup(
        pool: &BufferPool,
        target: BackupTarget<'_>,
    ) -> Result<BackupImage, BackupError> {
        Self::take(pool, target, false)
    }

    /// Like [`BackupImage::take_full_backup`] but a directory target stops
    /// after writing the shadow file, as if the process crashed there.
    pub fn take_full_backup_crashing(
        pool: &BufferPool,
        target: BackupTarget<'_>,
    ) -> Result<BackupImage, BackupError> {
        Self::take(pool, target, true)
    }

    fn take(pool: &BufferPool, target: BackupTarget<'_>, crash: bool) -> Result<BackupImage, BackupError> {
        pool.flush_all()?;
        let wal = pool.wal();
        wal.flush(wal.end_lsn())?;
        let min_lsn = wal.durable_lsn();
        let geometry = pool.geometry();
        let source = pool.live_volume();
        match target {
            BackupTarget::Device(device) => Self::from_volume(&source, min_lsn, device),
            BackupTarget::Dir {
                path,
                latency,
                mode,
            } => {
                fs::create_dir_all(path)?;
                let dest = path.join(backup_file_name(min_lsn));
                let tmp = path.join(format!("{}.tmp", backup_file_name(min_lsn)));
                {
                    let device = Arc::new(Device::new(
                        DeviceRole::Backup,
                        Box::new(FileBackend::create(&tmp)?),
                        latency,
                        mode,
                    ));
                    device.write_at(0, &encode_header(min_lsn, &geometry))?;
                    let pages = PageFile::new(device.clone(), geometry, BACKUP_HEADER_LEN as u64);
                    source.pages().copy_to(&pages)?;
                    device.sync()?;
                }
                if crash {
                    return Err(BackupError::InjectedCrash);
                }
                fs::rename(&tmp, &dest)?;
                Self::open(&dest, latency, mode)
            }
        }
    }

    /// Copies `source` onto `device` as a backup with the given `min_lsn`.
    /// The caller guarantees that no page of `source` has `page_lsn >= min_lsn`.
    pub fn from_volume(source: &Volume, min_lsn: Lsn, device: Arc<Device>) -> Result<BackupImage, BackupError> {
        let geometry = source.geometry();
        device.write_at(0, &encode_header(min_lsn, &geometry))?;
        let pages = PageFile::new(device, geometry, BACKUP_HEADER_LEN as u64);
        source.pages().copy_to(&pages)?;
        Ok(BackupImage {
            min_lsn,
            pages,
            path: None,
        })
    }

    /// Opens a published backup file.
    pub fn open(path: &Path, latency: LatencyModel, mode: ClockMode) -> Result<BackupImage, BackupError> {
        let device = Arc::new(Device::new(
            DeviceRole::Backup,
            Box::new(FileBackend::open(path)?),
            latency,
            mode,
        ));
        let mut img = Self::from_device(device)?;
        img.path = Some(path.to_path_buf());
        Ok(img)
    }

    pub fn from_device(device: Arc<Device>) -> Result<BackupImage, BackupError> {
        let mut header = [0u8; BACKUP_HEADER_LEN];
        device.read_at(0, &mut header)?;
        let (min_lsn, geometry) = decode_header(&header)?;
        if device.len()? < BACKUP_HEADER_LEN as u64 + geometry.volume_bytes() {
            return Err(BackupError::BadHeader);
        }
        Ok(BackupImage {
            min_lsn,
            pages: PageFile::new(device, geometry, BACKUP_HEADER_LEN as u64),
            path: None,
        })
    }

    /// Newest backup (highest `min_lsn`) in `dir`, ignoring shadow files.
    pub fn latest_in(dir: &Path, latency: LatencyModel, mode: ClockMode) -> Result<Option<BackupImage>, BackupError> {
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(lsn) = name
                .strip_prefix("backup_")
                .and_then(|s| s.strip_suffix(".img"))
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            if best.as_ref().is_none_or(|(b, _)| lsn > *b) {
                best = Some((lsn, entry.path()));
            }
        }
        best.map(|(_, p)| Self::open(&p, latency, mode)).transpose()
    }

    pub fn min_lsn(&self) -> Lsn {
        self.min_lsn
    }

    pub fn geometry(&self) -> Geometry {
        self.pages.geometry()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn device(&self) -> &Arc<Device> {
        self.pages.device()
    }

    pub fn pages(&self) -> &PageFile {
        &self.pages
    }

    /// The backed-up images of one segment, read as one contiguous transfer.
    pub fn fetch_segment(&self, segment: SegmentId) -> Result<Vec<Page>, BackupError> {
        let g = self.geometry();
        if segment.0 >= g.segment_count() {
            return Err(BackupError::InvalidSegment(segment));
        }
        let r = g.segment_pages(segment, 1);
        Ok(self.pages.read_pages(PageId(r.start), r.end - r.start)?)
    }

    /// Backed-up images of `count` segments starting at `first`, as one
    /// contiguous transfer.
    pub fn fetch_segments(&self, first: SegmentId, count: u64) -> Result<Vec<Page>, BackupError> {
        let g = self.geometry();
        if count == 0 || first.0 + count > g.segment_count() {
            return Err(BackupError::InvalidSegment(SegmentId(first.0 + count)));
        }
        let r = g.segment_pages(first, count);
        Ok(self.pages.read_pages(PageId(r.start), r.end - r.start)?)
    }

    pub fn fetch_page(&self, page: PageId) -> Result<Page, BackupError> {
        Ok(self.pages.read_page(page)?)
    }
}
