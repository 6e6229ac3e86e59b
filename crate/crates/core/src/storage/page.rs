//! Page image layout.
//!
//! ```text
//! [page_id u64][page_lsn u64][record_count u16]
//! repeated record_count times, ascending by key:
//!   [key u32][value_len u16][value bytes]
//! [zero padding]
//! [crc32 u32]   over every preceding byte of the page
//! ```
//!
//! All integers are little-endian.

use std::collections::BTreeMap;

use crate::types::{Lsn, PageId};
use crate::wal::LogOp;

pub const PAGE_HEADER_LEN: usize = 8 + 8 + 2;
pub const RECORD_OVERHEAD: usize = 4 + 2;
pub const CHECKSUM_LEN: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PageError {
    #[error("checksum mismatch on {page}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        page: PageId,
        stored: u32,
        computed: u32,
    },
    #[error("{0} does not fit in the page")]
    Full(PageId),
    #[error("malformed page image: {0}")]
    Malformed(&'static str),
    #[error("expected {expected}, image holds {found}")]
    WrongPage { expected: PageId, found: PageId },
}

/// In-memory page: a small sorted key/value set plus the LSN of the last
/// update applied to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Page {
    pub id: PageId,
    pub lsn: Lsn,
    pub records: BTreeMap<u32, Vec<u8>>,
}

impl Page {
    pub fn empty(id: PageId) -> Self {
        Page {
            id,
            lsn: Lsn::NULL,
            records: BTreeMap::new(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        PAGE_HEADER_LEN
            + self
                .records
                .values()
                .map(|v| RECORD_OVERHEAD + v.len())
                .sum::<usize>()
            + CHECKSUM_LEN
    }

    /// Whether the page would still serialize into `page_size` bytes after
    /// applying `op`.
    pub fn fits_after(&self, op: &LogOp, page_size: usize) -> bool {
        let delta: isize = match op {
            LogOp::Set { key, value } => match self.records.get(key) {
                Some(old) => value.len() as isize - old.len() as isize,
                None => (RECORD_OVERHEAD + value.len()) as isize,
            },
            LogOp::Delete { key } => match self.records.get(key) {
                Some(old) => -((RECORD_OVERHEAD + old.len()) as isize),
                None => 0,
            },
        };
        self.encoded_len() as isize + delta <= page_size as isize
    }

    /// Applies the payload of a log record. The caller sets `lsn`.
    pub fn apply_op(&mut self, op: &LogOp) {
        match op {
            LogOp::Set { key, value } => {
                self.records.insert(*key, value.clone());
            }
            LogOp::Delete { key } => {
                self.records.remove(key);
            }
        }
    }

    pub fn encode_into(&self, buf: &mut [u8]) -> Result<(), PageError> {
        let size = buf.len();
        if self.encoded_len() > size {
            return Err(PageError::Full(self.id));
        }
        if self.records.len() > u16::MAX as usize {
            return Err(PageError::Full(self.id));
        }
        buf.fill(0);
        buf[0..8].copy_from_slice(&self.id.0.to_le_bytes());
        buf[8..16].copy_from_slice(&self.lsn.0.to_le_bytes());
        buf[16..18].copy_from_slice(&(self.records.len() as u16).to_le_bytes());
        let mut pos = PAGE_HEADER_LEN;
        for (key, value) in &self.records {
            buf[pos..pos + 4].copy_from_slice(&key.to_le_bytes());
            buf[pos + 4..pos + 6].copy_from_slice(&(value.len() as u16).to_le_bytes());
            pos += RECORD_OVERHEAD;
            buf[pos..pos + value.len()].copy_from_slice(value);
            pos += value.len();
        }
        let crc = crc32fast::hash(&buf[..size - CHECKSUM_LEN]);
        buf[size - CHECKSUM_LEN..].copy_from_slice(&crc.to_le_bytes());
        Ok(())
    }

    pub fn encode(&self, page_size: usize) -> Result<Vec<u8>, PageError> {
        let mut buf = vec![0u8; page_size];
        self.encode_into(&mut buf)?;
        Ok(buf)
    }

    /// Decodes and verifies a page image.
    pub fn decode(buf: &[u8]) -> Result<Page, PageError> {
        let size = buf.len();
        if size < PAGE_HEADER_LEN + CHECKSUM_LEN {
            return Err(PageError::Malformed("image shorter than header"));
        }
        let id = PageId(u64::from_le_bytes(buf[0..8].try_into().unwrap()));
        let stored = u32::from_le_bytes(buf[size - CHECKSUM_LEN..].try_into().unwrap());
        let computed = crc32fast::hash(&buf[..size - CHECKSUM_LEN]);
        if stored != computed {
            return Err(PageError::Checksum {
                page: id,
                stored,
                computed,
            });
        }
        let lsn = Lsn(u64::from_le_bytes(buf[8..16].try_into().unwrap()));
        let count = u16::from_le_bytes(buf[16..18].try_into().unwrap()) as usize;
        let body_end = size - CHECKSUM_LEN;
        let mut records = BTreeMap::new();
        let mut pos = PAGE_HEADER_LEN;
        for _ in 0..count {
            if pos + RECORD_OVERHEAD > body_end {
                return Err(PageError::Malformed("record header past end"));
            }
            let key = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
            let len = u16::from_le_bytes(buf[pos + 4..pos + 6].try_into().unwrap()) as usize;
            pos += RECORD_OVERHEAD;
            if pos + len > body_end {
                return Err(PageError::Malformed("record value past end"));
            }
            records.insert(key, buf[pos..pos + len].to_vec());
            pos += len;
        }
        Ok(Page { id, lsn, records })
    }

    /// Decodes an image that must belong to `expected`.
    pub fn decode_for(expected: PageId, buf: &[u8]) -> Result<Page, PageError> {
        let page = match Page::decode(buf) {
            Err(PageError::Checksum {
                stored, computed, ..
            }) => {
                return Err(PageError::Checksum {
                    page: expected,
                    stored,
                    computed,
                })
            }
            other => other?,
        };
        if page.id != expected {
            return Err(PageError::WrongPage {
                expected,
                found: page.id,
            });
        }
        Ok(page)
    }
}
