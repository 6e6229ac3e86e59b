//! Page store with an indexed, partially sorted log archive and incremental,
//! on-demand media restore.
//!
//! The crate is organised bottom-up:
//!
//! ```text
//!   restore  ── segment bitmap, scheduler, replay, single-page repair
//!      │
//!   backup  archive ── sorted runs, block index, bloom filters, k-way merge
//!      │      │
//!     wal ────┘      ── append-only log, per-page chains, page recovery index
//!      │
//!   storage ── pages, simulated devices, volumes, buffer pool
//! ```
//!
//! A media failure on the database device is handled by attaching a
//! [`restore::RestoreManager`] to the [`storage::BufferPool`]: page misses on
//! segments that have not been restored yet turn into restore requests, and
//! everything already in the pool keeps being served as if nothing happened.

pub mod archive;
pub mod backup;
pub mod clock;
pub mod restore;
pub mod storage;
pub mod types;
pub mod wal;

pub use types::{Geometry, Lsn, PageId, SegmentId};
