//! Page storage: page images, simulated devices, volumes and the buffer pool.
//!
//! All page I/O for the database volume flows through [`BufferPool`]. After a
//! media failure the pool routes misses either to the replacement volume
//! (segment already restored) or to a [`SegmentGate`] that restores the
//! segment first.

pub mod buffer;
pub mod device;
pub mod page;
pub mod volume;

pub use buffer::{Blocker, BufferPool, Fix, FixMode, PageHandle, PoolStats, SegmentGate};
pub use device::{Backend, Device, DeviceRole, FileBackend, IoStats, IoTimer, MemBackend};
pub use page::{Page, PageError};
pub use volume::{PageFile, Volume};

use crate::types::{Lsn, PageId, SegmentId};
use crate::wal::WalError;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Page(#[from] PageError),

    #[error("media failure on {0:?} device")]
    MediaFailure(DeviceRole),

    #[error("device already failed")]
    AlreadyFailed,

    #[error("database device has not failed")]
    NotFailed,

    #[error("{0:?} device is stable storage and cannot fail")]
    StableDevice(DeviceRole),

    #[error("bad header: {0}")]
    BadHeader(&'static str),

    #[error("invalid {0}")]
    InvalidPage(PageId),

    #[error("invalid {0}")]
    InvalidSegment(SegmentId),

    #[error("{segment} holds {expected} pages, got {got}")]
    SegmentLength {
        segment: SegmentId,
        expected: u64,
        got: u64,
    },

    #[error("every buffer frame is pinned")]
    PoolExhausted,

    #[error("{0} is not restored yet")]
    SegmentNotRestored(SegmentId),

    #[error("page is fixed in shared mode")]
    SharedLatch,

    #[error("restore of {segment} failed: {reason}")]
    RestoreFailed { segment: SegmentId, reason: String },

    #[error("log: {0}")]
    Wal(Box<WalError>),
}

impl From<WalError> for StorageError {
    fn from(e: WalError) -> Self {
        StorageError::Wal(Box::new(e))
    }
}

/// Returned by [`BufferPool::fail_device`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FailureToken {
    /// End of the log at the moment of failure; the archive must cover
    /// everything below it before restore may begin.
    pub failure_lsn: Lsn,
}
