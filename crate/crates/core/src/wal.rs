//! Append-only redo log.
//!
//! The LSN of a record is its byte offset in the log file, which starts with
//! a 16-byte header `[b"SGWL1\0\0\0"][base_lsn u64]`. `base_lsn` is the LSN
//! of the first record still in the file; it only moves when the log is
//! truncated. Each record is laid out as
//!
//! ```text
//! [total_len u32][lsn u64][page_id u64][txn_id u64][prev_page_lsn u64]
//! [op u8][key u32][value_len u16][value bytes][crc32 u32]
//! ```
//!
//! little-endian, where `total_len` counts the whole record and the crc
//! covers every byte before it. `prev_page_lsn` links the records of one
//! page into a backward chain, kept cheap by the in-memory page recovery
//! index (page id -> LSN of the newest record for that page).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::storage::{Device, StorageError};
use crate::types::{Lsn, PageId};

pub const LOG_MAGIC: &[u8; 8] = b"SGWL1\0\0\0";
pub const LOG_HEADER_LEN: u64 = 16;
pub const RECORD_HEADER_LEN: usize = 4 + 8 + 8 + 8 + 8 + 1 + 4 + 2;
pub const RECORD_CRC_LEN: usize = 4;

const OP_SET: u8 = 1;
const OP_DELETE: u8 = 2;
const SCAN_CHUNK: usize = 256 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WalError {
    #[error(transparent)]
    Device(#[from] StorageError),

    #[error("corrupt log record at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: &'static str },

    #[error("broken log chain for {page} at {lsn}")]
    BrokenChain { page: PageId, lsn: Lsn },

    #[error("log device full ({capacity} bytes)")]
    Full { capacity: u64 },

    #[error("bad log header")]
    BadHeader,
}

/// Redo payload of one page update.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LogOp {
    Set { key: u32, value: Vec<u8> },
    Delete { key: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LogRecord {
    pub lsn: Lsn,
    pub page_id: PageId,
    pub txn_id: u64,
    pub prev_page_lsn: Lsn,
    pub op: LogOp,
}

impl LogRecord {
    pub fn encoded_len(&self) -> usize {
        let value_len = match &self.op {
            LogOp::Set { value, .. } => value.len(),
            LogOp::Delete { .. } => 0,
        };
        RECORD_HEADER_LEN + value_len + RECORD_CRC_LEN
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        let (op, key, value): (u8, u32, &[u8]) = match &self.op {
            LogOp::Set { key, value } => (OP_SET, *key, value),
            LogOp::Delete { key } => (OP_DELETE, *key, &[]),
        };
        out.extend_from_slice(&(self.encoded_len() as u32).to_le_bytes());
        out.extend_from_slice(&self.lsn.0.to_le_bytes());
        out.extend_from_slice(&self.page_id.0.to_le_bytes());
        out.extend_from_slice(&self.txn_id.to_le_bytes());
        out.extend_from_slice(&self.prev_page_lsn.0.to_le_bytes());
        out.push(op);
        out.extend_from_slice(&key.to_le_bytes());
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        out.extend_from_slice(value);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    /// Length of the record starting at `buf`, if its length prefix is there.
    pub fn peek_len(buf: &[u8]) -> Option<usize> {
        (buf.len() >= 4).then(|| u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize)
    }

    /// Decodes one record from the front of `buf`, returning it and its
    /// length. Errors carry a reason; callers attach the offset.
    pub fn decode(buf: &[u8]) -> Result<(LogRecord, usize), &'static str> {
        let len = Self::peek_len(buf).ok_or("truncated length prefix")?;
        if len < RECORD_HEADER_LEN + RECORD_CRC_LEN {
            return Err("length prefix too small");
        }
        if buf.len() < len {
            return Err("truncated record");
        }
        let body = &buf[..len - RECORD_CRC_LEN];
        let stored = u32::from_le_bytes(buf[len - RECORD_CRC_LEN..len].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err("crc mismatch");
        }
        let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let op = body[36];
        let key = u32::from_le_bytes(body[37..41].try_into().unwrap());
        let value_len = u16::from_le_bytes(body[41..43].try_into().unwrap()) as usize;
        if RECORD_HEADER_LEN + value_len + RECORD_CRC_LEN != len {
            return Err("value length disagrees with record length");
        }
        let op = match op {
            OP_SET => LogOp::Set {
                key,
                value: body[RECORD_HEADER_LEN..].to_vec(),
            },
            OP_DELETE => LogOp::Delete { key },
            _ => return Err("unknown op"),
        };
        Ok((
            LogRecord {
                lsn: Lsn(u64_at(4)),
                page_id: PageId(u64_at(12)),
                txn_id: u64_at(20),
                prev_page_lsn: Lsn(u64_at(28)),
                op,
            },
            len,
        ))
    }
}

#[derive(Clone, Debug, Default)]
pub struct WalConfig {
    /// Records buffered before an automatic flush; 0 or 1 flushes on every
    /// append.
    pub flush_every: usize,
    /// Maximum log size in bytes; appends beyond it fail.
    pub capacity: Option<u64>,
    /// Call `sync` on the device at every flush.
    pub sync: bool,
}

struct Tail {
    base: u64,
    end: u64,
    buf: Vec<u8>,
    buf_start: u64,
    buffered: usize,
    boundaries: Vec<u64>,
    index: HashMap<PageId, Lsn>,
}

pub struct Wal {
    device: Arc<Device>,
    config: WalConfig,
    tail: Mutex<Tail>,
    durable: AtomicU64,
    end: AtomicU64,
}

impl std::fmt::Debug for Wal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Wal")
            .field("end", &self.end_lsn())
            .field("durable", &self.durable_lsn())
            .finish()
    }
}

fn encode_header(base: u64) -> [u8; LOG_HEADER_LEN as usize] {
    let mut h = [0u8; LOG_HEADER_LEN as usize];
    h[..8].copy_from_slice(LOG_MAGIC);
    h[8..].copy_from_slice(&base.to_le_bytes());
    h
}

impl Wal {
    pub fn create(device: Arc<Device>, config: WalConfig) -> Result<Wal, WalError> {
        device.set_len(0)?;
        device.write_at(0, &encode_header(LOG_HEADER_LEN))?;
        Ok(Self::with_tail(
            device,
            config,
            Tail {
                base: LOG_HEADER_LEN,
                end: LOG_HEADER_LEN,
                buf: Vec::new(),
                buf_start: LOG_HEADER_LEN,
                buffered: 0,
                boundaries: Vec::new(),
                index: HashMap::new(),
            },
        ))
    }

    /// Opens an existing log, rebuilding the page recovery index with a full
    /// scan. A torn record at the end marks the end of the log.
    pub fn open(device: Arc<Device>, config: WalConfig) -> Result<Wal, WalError> {
        let mut header = [0u8; LOG_HEADER_LEN as usize];
        device.read_at(0, &mut header)?;
        if &header[..8] != LOG_MAGIC {
            return Err(WalError::BadHeader);
        }
        let base = u64::from_le_bytes(header[8..].try_into().unwrap());
        let file_len = device.len()?;
        let mut bytes = vec![0u8; (file_len - LOG_HEADER_LEN) as usize];
        device.read_at(LOG_HEADER_LEN, &mut bytes)?;
        let mut pos = 0usize;
        let mut boundaries = Vec::new();
        let mut index = HashMap::new();
        while pos < bytes.len() {
            match LogRecord::decode(&bytes[pos..]) {
                Ok((rec, len)) if rec.lsn.0 == base + pos as u64 => {
                    boundaries.push(rec.lsn.0);
                    index.insert(rec.page_id, rec.lsn);
                    pos += len;
                }
                _ => break,
            }
        }
        let end = base + pos as u64;
        Ok(Self::with_tail(
            device,
            config,
            Tail {
                base,
                end,
                buf: Vec::new(),
                buf_start: end,
                buffered: 0,
                boundaries,
                index,
            },
        ))
    }

    fn with_tail(device: Arc<Device>, config: WalConfig, tail: Tail) -> Wal {
        let end = tail.end;
        Wal {
            device,
            config,
            tail: Mutex::new(tail),
            durable: AtomicU64::new(end),
            end: AtomicU64::new(end),
        }
    }

    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }

    /// LSN the next record will get.
    pub fn end_lsn(&self) -> Lsn {
        Lsn(self.end.load(Ordering::SeqCst))
    }

    /// Every record below this LSN is on the log device.
    pub fn durable_lsn(&self) -> Lsn {
        Lsn(self.durable.load(Ordering::SeqCst))
    }

    /// LSN of the oldest record still in the log.
    pub fn base_lsn(&self) -> Lsn {
        Lsn(self.tail.lock().base)
    }

    pub fn record_count(&self) -> usize {
        self.tail.lock().boundaries.len()
    }

    /// Newest LSN written for `page`.
    pub fn head(&self, page: PageId) -> Option<Lsn> {
        self.tail.lock().index.get(&page).copied()
    }

    pub fn recovery_index(&self) -> HashMap<PageId, Lsn> {
        self.tail.lock().index.clone()
    }

    fn offset(base: u64, lsn: u64) -> u64 {
        lsn - base + LOG_HEADER_LEN
    }

    pub fn append(&self, page_id: PageId, txn_id: u64, op: LogOp) -> Result<Lsn, WalError> {
        let mut t = self.tail.lock();
        let lsn = Lsn(t.end);
        let rec = LogRecord {
            lsn,
            page_id,
            txn_id,
            prev_page_lsn: t.index.get(&page_id).copied().unwrap_or(Lsn::NULL),
            op,
        };
        let len = rec.encoded_len() as u64;
        if let Some(capacity) = self.config.capacity {
            if Self::offset(t.base, t.end) + len > capacity {
                return Err(WalError::Full { capacity });
            }
        }
        rec.encode(&mut t.buf);
        t.boundaries.push(lsn.0);
        t.index.insert(page_id, lsn);
        t.end += len;
        t.buffered += 1;
        self.end.store(t.end, Ordering::SeqCst);
        if self.config.flush_every <= 1 || t.buffered >= self.config.flush_every {
            self.flush_locked(&mut t)?;
        }
        Ok(lsn)
    }

    /// Makes every record with `lsn <= up_to` durable. Requests beyond the
    /// end of the log are clamped to the end.
    pub fn flush(&self, up_to: Lsn) -> Result<(), WalError> {
        if up_to.0 < self.durable.load(Ordering::SeqCst) {
            return Ok(());
        }
        let mut t = self.tail.lock();
        self.flush_locked(&mut t)
    }

    pub fn flush_all(&self) -> Result<(), WalError> {
        let mut t = self.tail.lock();
        self.flush_locked(&mut t)
    }

    fn flush_locked(&self, t: &mut Tail) -> Result<(), WalError> {
        if t.buf.is_empty() {
            return Ok(());
        }
        self.device.write_at(Self::offset(t.base, t.buf_start), &t.buf)?;
        if self.config.sync {
            self.device.sync()?;
        }
        t.buf.clear();
        t.buf_start = t.end;
        t.buffered = 0;
        self.durable.store(t.end, Ordering::SeqCst);
        Ok(())
    }

    /// Durable records with `lsn >= from`, in LSN order.
    pub fn scan(&self, from: Lsn) -> WalScan<'_> {
        let t = self.tail.lock();
        let start = match t.boundaries.binary_search(&from.0) {
            Ok(i) | Err(i) => t.boundaries.get(i).copied().unwrap_or(t.end),
        };
        let start = start.max(t.base);
        let limit = self.durable.load(Ordering::SeqCst).max(start);
        WalScan {
            wal: self,
            base: t.base,
            next: start,
            limit,
            buf: Vec::new(),
            buf_lsn: start,
            pos: 0,
            failed: false,
        }
    }

    /// Reads the record that starts at `lsn`.
    pub fn read_record(&self, lsn: Lsn) -> Result<LogRecord, WalError> {
        let base = {
            let t = self.tail.lock();
            if lsn.0 < t.base || lsn.0 >= t.end {
                return Err(WalError::Corrupt {
                    offset: lsn.0,
                    reason: "lsn outside the log",
                });
            }
            if lsn.0 >= t.buf_start {
                let at = (lsn.0 - t.buf_start) as usize;
                return LogRecord::decode(&t.buf[at..])
                    .map(|(r, _)| r)
                    .map_err(|reason| WalError::Corrupt {
                        offset: lsn.0,
                        reason,
                    });
            }
            t.base
        };
        let off = Self::offset(base, lsn.0);
        let mut prefix = [0u8; 4];
        self.device.read_at(off, &mut prefix)?;
        let len = u32::from_le_bytes(prefix) as usize;
        if len < RECORD_HEADER_LEN + RECORD_CRC_LEN || len > (u16::MAX as usize) + RECORD_HEADER_LEN + RECORD_CRC_LEN {
            return Err(WalError::Corrupt {
                offset: lsn.0,
                reason: "implausible record length",
            });
        }
        let mut buf = vec![0u8; len];
        self.device.read_at(off, &mut buf)?;
        let (rec, _) = LogRecord::decode(&buf).map_err(|reason| WalError::Corrupt {
            offset: lsn.0,
            reason,
        })?;
        if rec.lsn != lsn {
            return Err(WalError::Corrupt {
                offset: lsn.0,
                reason: "record lsn does not match its position",
            });
        }
        Ok(rec)
    }

    /// The records of `page` from `from` backwards, newest first.
    pub fn page_chain(&self, page: PageId, from: Lsn) -> PageChain<'_> {
        self.page_chain_until(page, from, Lsn::NULL)
    }

    /// Like [`Wal::page_chain`] but stops before any record below `floor`
    /// without reading it.
    pub fn page_chain_until(&self, page: PageId, from: Lsn, floor: Lsn) -> PageChain<'_> {
        PageChain {
            wal: self,
            page,
            next: from,
            floor,
        }
    }

    /// Drops every record below `up_to` from the log file. Must only be
    /// called while no appends are running.
    pub fn truncate(&self, up_to: Lsn) -> Result<Lsn, WalError> {
        let mut t = self.tail.lock();
        self.flush_locked(&mut t)?;
        let idx = t.boundaries.partition_point(|&b| b < up_to.0);
        let new_base = t.boundaries.get(idx).copied().unwrap_or(t.end);
        if new_base <= t.base {
            return Ok(Lsn(t.base));
        }
        let from = Self::offset(t.base, new_base);
        let to = Self::offset(t.base, t.end);
        let mut suffix = vec![0u8; (to - from) as usize];
        self.device.read_at(from, &mut suffix)?;
        self.device.write_at(0, &encode_header(new_base))?;
        self.device.write_at(LOG_HEADER_LEN, &suffix)?;
        self.device.set_len(LOG_HEADER_LEN + suffix.len() as u64)?;
        t.base = new_base;
        t.boundaries.drain(..idx);
        Ok(Lsn(new_base))
    }
}

/// Sequential reader over the durable part of the log.
pub struct WalScan<'a> {
    wal: &'a Wal,
    base: u64,
    next: u64,
    limit: u64,
    buf: Vec<u8>,
    buf_lsn: u64,
    pos: usize,
    failed: bool,
}

impl WalScan<'_> {
    fn refill(&mut self) -> Result<(), WalError> {
        let remaining = self.buf.split_off(self.pos);
        self.buf_lsn += self.pos as u64;
        self.buf = remaining;
        self.pos = 0;
        let read_from = self.buf_lsn + self.buf.len() as u64;
        let n = ((self.limit - read_from) as usize).min(SCAN_CHUNK);
        if n == 0 {
            return Ok(());
        }
        let old = self.buf.len();
        self.buf.resize(old + n, 0);
        self.wal
            .device
            .read_at(Wal::offset(self.base, read_from), &mut self.buf[old..])?;
        Ok(())
    }
}

impl Iterator for WalScan<'_> {
    type Item = Result<LogRecord, WalError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.limit {
            return None;
        }
        let avail = &self.buf[self.pos..];
        let need = LogRecord::peek_len(avail).unwrap_or(usize::MAX);
        if avail.len() < 4 || avail.len() < need {
            if let Err(e) = self.refill() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        match LogRecord::decode(&self.buf[self.pos..]) {
            Ok((rec, len)) if rec.lsn.0 == self.next => {
                self.pos += len;
                self.next += len as u64;
                Some(Ok(rec))
            }
            Ok(_) => {
                self.failed = true;
                Some(Err(WalError::Corrupt {
                    offset: self.next,
                    reason: "record lsn does not match its position",
                }))
            }
            Err(reason) => {
                self.failed = true;
                Some(Err(WalError::Corrupt {
                    offset: self.next,
                    reason,
                }))
            }
        }
    }
}

/// Backward walk along one page's chain.
pub struct PageChain<'a> {
    wal: &'a Wal,
    page: PageId,
    next: Lsn,
    floor: Lsn,
}

impl Iterator for PageChain<'_> {
    type Item = Result<LogRecord, WalError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next.is_null() || self.next < self.floor {
            return None;
        }
        let lsn = self.next;
        self.next = Lsn::NULL;
        let broken = WalError::BrokenChain {
            page: self.page,
            lsn,
        };
        match self.wal.read_record(lsn) {
            Ok(rec) if rec.page_id == self.page && rec.prev_page_lsn < rec.lsn => {
                self.next = rec.prev_page_lsn;
                Some(Ok(rec))
            }
            Ok(_) | Err(WalError::Corrupt { .. }) => Some(Err(broken)),
            Err(e) => Some(Err(e)),
        }
    }
}
