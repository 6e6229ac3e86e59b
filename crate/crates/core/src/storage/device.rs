//! Simulated block devices over ordinary files (or memory) with an
//! injectable latency model and media-failure injection.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};

use super::StorageError;
use crate::clock::{self, ClockMode, LatencyModel};

/// Raw byte storage behind a [`Device`].
pub trait Backend: Send + Sync {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
    fn write_at(&self, offset: u64, buf: &[u8]) -> io::Result<()>;
    fn len(&self) -> io::Result<u64>;
    fn set_len(&self, len: u64) -> io::Result<()>;
    fn sync(&self) -> io::Result<()>;

    fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }
}

/// Lets several devices (say, one without latency for setup and one with
/// latency for the run) share the same bytes.
impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        (**self).read_at(offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &[u8]) -> io::Result<()> {
        (**self).write_at(offset, buf)
    }

    fn len(&self) -> io::Result<u64> {
        (**self).len()
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        (**self).set_len(len)
    }

    fn sync(&self) -> io::Result<()> {
        (**self).sync()
    }
}

#[derive(Debug)]
pub struct FileBackend {
    file: File,
}

impl FileBackend {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        Ok(FileBackend { file })
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        Ok(FileBackend { file })
    }

    pub fn from_file(file: File) -> Self {
        FileBackend { file }
    }
}

impl Backend for FileBackend {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.file.read_exact_at(buf, offset)
    }

    fn write_at(&self, offset: u64, buf: &[u8]) -> io::Result<()> {
        self.file.write_all_at(buf, offset)
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        self.file.set_len(len)
    }

    fn sync(&self) -> io::Result<()> {
        self.file.sync_data()
    }
}

/// Growable in-memory backend.
#[derive(Debug, Default)]
pub struct MemBackend {
    data: RwLock<Vec<u8>>,
}

impl MemBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        MemBackend {
            data: RwLock::new(Vec::with_capacity(bytes)),
        }
    }
}

impl Backend for MemBackend {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let data = self.data.read();
        let start = offset as usize;
        let end = start + buf.len();
        if end > data.len() {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "read past end of device",
            ));
        }
        buf.copy_from_slice(&data[start..end]);
        Ok(())
    }

    fn write_at(&self, offset: u64, buf: &[u8]) -> io::Result<()> {
        let mut data = self.data.write();
        let start = offset as usize;
        let end = start + buf.len();
        if end > data.len() {
            data.resize(end, 0);
        }
        data[start..end].copy_from_slice(buf);
        Ok(())
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.data.read().len() as u64)
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        self.data.write().resize(len as usize, 0);
        Ok(())
    }

    fn sync(&self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DeviceRole {
    Database,
    Replacement,
    Log,
    Archive,
    Backup,
}

impl DeviceRole {
    /// Log, archive and backup live on stable storage.
    pub fn can_fail(self) -> bool {
        matches!(self, DeviceRole::Database | DeviceRole::Replacement)
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    /// Operations that reached a failed device.
    pub rejected: u64,
    /// Simulated time charged, in nanoseconds.
    pub busy_ns: u64,
}

/// Latency accounting shared by devices and the archive directory.
#[derive(Debug)]
pub struct IoTimer {
    latency: LatencyModel,
    mode: ClockMode,
    reads: AtomicU64,
    writes: AtomicU64,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    rejected: AtomicU64,
    busy_ns: AtomicU64,
}

impl IoTimer {
    pub fn new(latency: LatencyModel, mode: ClockMode) -> Self {
        IoTimer {
            latency,
            mode,
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
            bytes_read: AtomicU64::new(0),
            bytes_written: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            busy_ns: AtomicU64::new(0),
        }
    }

    pub fn latency(&self) -> LatencyModel {
        self.latency
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn charge_read(&self, bytes: u64) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes, Ordering::Relaxed);
        self.charge(bytes);
    }

    pub fn charge_write(&self, bytes: u64) {
        self.writes.fetch_add(1, Ordering::Relaxed);
        self.bytes_written.fetch_add(bytes, Ordering::Relaxed);
        self.charge(bytes);
    }

    fn charge(&self, bytes: u64) {
        let ns = self.latency.cost_ns(bytes);
        self.busy_ns.fetch_add(ns, Ordering::Relaxed);
        clock::charge(ns, self.mode);
    }

    pub fn stats(&self) -> IoStats {
        IoStats {
            reads: self.reads.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            busy_ns: self.busy_ns.load(Ordering::Relaxed),
        }
    }
}

/// One simulated device. I/O is serialized per device; a failed device
/// rejects every operation.
pub struct Device {
    role: DeviceRole,
    backend: Box<dyn Backend>,
    timer: IoTimer,
    failed: AtomicBool,
    io_lock: Mutex<()>,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("role", &self.role)
            .field("failed", &self.is_failed())
            .field("stats", &self.stats())
            .finish()
    }
}

impl Device {
    pub fn new(
        role: DeviceRole,
        backend: Box<dyn Backend>,
        latency: LatencyModel,
        mode: ClockMode,
    ) -> Self {
        Device {
            role,
            backend,
            timer: IoTimer::new(latency, mode),
            failed: AtomicBool::new(false),
            io_lock: Mutex::new(()),
        }
    }

    /// In-memory device without latency, mostly for tests.
    pub fn in_memory(role: DeviceRole) -> Self {
        Device::new(
            role,
            Box::new(MemBackend::new()),
            LatencyModel::ZERO,
            ClockMode::Virtual,
        )
    }

    pub fn role(&self) -> DeviceRole {
        self.role
    }

    pub fn is_failed(&self) -> bool {
        self.failed.load(Ordering::SeqCst)
    }

    /// Injects a media failure.
    pub fn fail(&self) -> Result<(), StorageError> {
        if !self.role.can_fail() {
            return Err(StorageError::StableDevice(self.role));
        }
        if self.failed.swap(true, Ordering::SeqCst) {
            return Err(StorageError::AlreadyFailed);
        }
        Ok(())
    }

    fn check(&self) -> Result<(), StorageError> {
        if self.is_failed() {
            self.timer.rejected.fetch_add(1, Ordering::Relaxed);
            return Err(StorageError::MediaFailure(self.role));
        }
        Ok(())
    }

    pub fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<(), StorageError> {
        self.check()?;
        let _io = self.io_lock.lock();
        self.timer.charge_read(buf.len() as u64);
        self.backend.read_at(offset, buf)?;
        Ok(())
    }

    pub fn write_at(&self, offset: u64, buf: &[u8]) -> Result<(), StorageError> {
        self.check()?;
        let _io = self.io_lock.lock();
        self.timer.charge_write(buf.len() as u64);
        self.backend.write_at(offset, buf)?;
        Ok(())
    }

    pub fn len(&self) -> Result<u64, StorageError> {
        Ok(self.backend.len()?)
    }

    pub fn is_empty(&self) -> Result<bool, StorageError> {
        Ok(self.backend.is_empty()?)
    }

    pub fn set_len(&self, len: u64) -> Result<(), StorageError> {
        self.check()?;
        let _io = self.io_lock.lock();
        self.backend.set_len(len)?;
        Ok(())
    }

    pub fn sync(&self) -> Result<(), StorageError> {
        self.check()?;
        self.backend.sync()?;
        Ok(())
    }

    /// Reads bypassing the latency model and failure state. Used for
    /// inspection in tests and verification tools, never by the engine.
    pub fn peek_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.backend.read_at(offset, buf)
    }

    pub fn stats(&self) -> IoStats {
        self.timer.stats()
    }

    pub fn latency(&self) -> LatencyModel {
        self.timer.latency()
    }
}
