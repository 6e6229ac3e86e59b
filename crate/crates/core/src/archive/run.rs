//! Run file format.
//!
//! ```text
//! header  [b"SGAR1"][begin_lsn u64][end_lsn u64][record_count u64][block_size u32]
//! blocks  log records in WAL format, sorted by (page_id, lsn)
//! index   [first_page_id u64][offset u64] per block
//! bloom   [bit_len u32][bits]
//! footer  [index_offset u64][bloom_offset u64][crc32 u32]
//! ```
//!
//! A block is closed once it holds at least `block_size` bytes, so records
//! never straddle blocks. The crc covers every byte before it.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::bloom::{BloomFilter, DEFAULT_HASHES};
use super::ArchiveError;
use crate::types::{Lsn, PageId};
use crate::wal::LogRecord;

pub const RUN_MAGIC: &[u8; 5] = b"SGAR1";
pub const RUN_HEADER_LEN: usize = 5 + 8 + 8 + 8 + 4;
pub const RUN_FOOTER_LEN: usize = 8 + 8 + 4;
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BlockEntry {
    pub first_page: PageId,
    pub offset: u64,
}

pub fn run_file_name(begin: Lsn, end: Lsn) -> String {
    format!("archive_{}_{}.run", begin.0, end.0)
}

/// Parses `archive_<begin>_<end>.run`.
pub fn parse_run_file_name(name: &str) -> Option<(Lsn, Lsn)> {
    let body = name.strip_prefix("archive_")?.strip_suffix(".run")?;
    let (b, e) = body.split_once('_')?;
    Some((Lsn(b.parse().ok()?), Lsn(e.parse().ok()?)))
}

/// Serializes records that are already sorted by `(page_id, lsn)`.
pub fn encode_run(begin: Lsn, end: Lsn, records: &[LogRecord], block_size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(RUN_HEADER_LEN + records.len() * 64);
    out.extend_from_slice(RUN_MAGIC);
    out.extend_from_slice(&begin.0.to_le_bytes());
    out.extend_from_slice(&end.0.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(block_size as u32).to_le_bytes());

    let mut bloom = BloomFilter::with_defaults(records.len());
    let mut index = Vec::new();
    let mut block_start = out.len();
    for (i, r) in records.iter().enumerate() {
        if i == 0 || out.len() - block_start >= block_size {
            block_start = out.len();
            index.push(BlockEntry {
                first_page: r.page_id,
                offset: block_start as u64,
            });
        }
        bloom.insert(r.page_id);
        r.encode(&mut out);
    }

    let index_offset = out.len() as u64;
    for e in &index {
        out.extend_from_slice(&e.first_page.0.to_le_bytes());
        out.extend_from_slice(&e.offset.to_le_bytes());
    }
    let bloom_offset = out.len() as u64;
    bloom.encode(&mut out);
    out.extend_from_slice(&index_offset.to_le_bytes());
    out.extend_from_slice(&bloom_offset.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// An open, verified run file. Index and bloom filter are kept in memory;
/// record blocks are read on demand.
#[derive(Debug)]
pub struct RunFile {
    path: PathBuf,
    file: File,
    begin: Lsn,
    end: Lsn,
    record_count: u64,
    block_size: u32,
    index: Vec<BlockEntry>,
    data_end: u64,
    bloom: BloomFilter,
    file_len: u64,
}

impl RunFile {
    /// Opens and fully verifies a run file.
    pub fn open(path: &Path) -> Result<RunFile, ArchiveError> {
        let file = File::open(path)?;
        let bytes = std::fs::read(path)?;
        let corrupt = |reason: &'static str| ArchiveError::CorruptRun {
            name: path.display().to_string(),
            reason,
        };
        if bytes.len() < RUN_HEADER_LEN + RUN_FOOTER_LEN || &bytes[..5] != RUN_MAGIC {
            return Err(corrupt("bad header"));
        }
        let crc_at = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
        if crc32fast::hash(&bytes[..crc_at]) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let begin = Lsn(u64_at(5));
        let end = Lsn(u64_at(13));
        let record_count = u64_at(21);
        let block_size = u32::from_le_bytes(bytes[29..33].try_into().unwrap());
        let footer = bytes.len() - RUN_FOOTER_LEN;
        let index_offset = u64_at(footer);
        let bloom_offset = u64_at(footer + 8);
        if index_offset < RUN_HEADER_LEN as u64
            || bloom_offset < index_offset
            || bloom_offset > footer as u64
            || (bloom_offset - index_offset) % 16 != 0
        {
            return Err(corrupt("bad footer"));
        }
        let index = bytes[index_offset as usize..bloom_offset as usize]
            .chunks_exact(16)
            .map(|c| BlockEntry {
                first_page: PageId(u64::from_le_bytes(c[..8].try_into().unwrap())),
                offset: u64::from_le_bytes(c[8..].try_into().unwrap()),
            })
            .collect();
        let bloom = BloomFilter::decode(&bytes[bloom_offset as usize..footer], DEFAULT_HASHES)
            .ok_or_else(|| corrupt("bad bloom filter"))?;
        if parse_run_file_name(&path.file_name().unwrap_or_default().to_string_lossy())
            .is_some_and(|r| r != (begin, end))
        {
            return Err(corrupt("file name disagrees with header"));
        }
        Ok(RunFile {
            path: path.to_path_buf(),
            file,
            begin,
            end,
            record_count,
            block_size,
            index,
            data_end: index_offset,
            bloom,
            file_len: bytes.len() as u64,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn name(&self) -> String {
        run_file_name(self.begin, self.end)
    }

    pub fn begin(&self) -> Lsn {
        self.begin
    }

    pub fn end(&self) -> Lsn {
        self.end
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn block_index(&self) -> &[BlockEntry] {
        &self.index
    }

    pub fn bloom(&self) -> &BloomFilter {
        &self.bloom
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    /// Byte range of the blocks that can hold pages in `[first, last]`.
    pub fn block_range(&self, first: PageId, last: PageId) -> Option<(u64, u64)> {
        let lo = self
            .index
            .partition_point(|e| e.first_page < first)
            .saturating_sub(1);
        let hi = self.index.partition_point(|e| e.first_page <= last);
        if lo >= hi {
            return None;
        }
        let start = self.index[lo].offset;
        let end = self.index.get(hi).map_or(self.data_end, |e| e.offset);
        Some((start, end))
    }

    /// Reads and decodes the bytes `[start, end)` of the record area.
    pub fn read_records(&self, start: u64, end: u64) -> Result<Vec<LogRecord>, ArchiveError> {
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.read_exact_at(&mut buf, start)?;
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < buf.len() {
            let (rec, len) = LogRecord::decode(&buf[pos..]).map_err(|reason| {
                ArchiveError::CorruptRun {
                    name: self.name(),
                    reason,
                }
            })?;
            if rec.lsn < self.begin || rec.lsn >= self.end {
                return Err(ArchiveError::CorruptRun {
                    name: self.name(),
                    reason: "record outside the run's lsn range",
                });
            }
            out.push(rec);
            pos += len;
        }
        Ok(out)
    }

    /// Every record in the run.
    pub fn read_all(&self) -> Result<Vec<LogRecord>, ArchiveError> {
        self.read_records(RUN_HEADER_LEN as u64, self.data_end)
    }

    pub fn data_len(&self) -> u64 {
        self.data_end - RUN_HEADER_LEN as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wal::LogOp;

    fn rec(page: u64, lsn: u64, value_len: usize) -> LogRecord {
        LogRecord {
            lsn: Lsn(lsn),
            page_id: PageId(page),
            txn_id: 1,
            prev_page_lsn: Lsn::NULL,
            op: LogOp::Set {
                key: 0,
                value: vec![1; value_len],
            },
        }
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(run_file_name(Lsn(0), Lsn(160)), "archive_0_160.run");
        assert_eq!(parse_run_file_name("archive_0_160.run"), Some((Lsn(0), Lsn(160))));
        assert_eq!(parse_run_file_name("archive_0_160.run.tmp"), None);
        assert_eq!(parse_run_file_name("backup_3.img"), None);
    }

    #[test]
    fn blocks_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<LogRecord> = (0..100).map(|i| rec(i / 3, 16 + i, 200)).collect();
        let bytes = encode_run(Lsn(0), Lsn(1000), &records, 1024);
        let path = dir.path().join(run_file_name(Lsn(0), Lsn(1000)));
        std::fs::write(&path, &bytes).unwrap();
        let run = RunFile::open(&path).unwrap();
        assert_eq!(run.record_count(), 100);
        assert!(run.block_index().len() > 10);
        assert_eq!(run.block_index()[0].offset, RUN_HEADER_LEN as u64);
        assert_eq!(run.read_all().unwrap(), records);
        for w in run.block_index().windows(2) {
            assert!(w[0].first_page <= w[1].first_page);
            assert!(w[0].offset < w[1].offset);
        }
        let (s, e) = run.block_range(PageId(10), PageId(12)).unwrap();
        let got = run.read_records(s, e).unwrap();
        for p in 10..=12 {
            assert_eq!(
                got.iter().filter(|r| r.page_id.0 == p).count(),
                3,
                "page {p} fully covered"
            );
        }
        assert!(run.block_range(PageId(500), PageId(600)).is_none_or(|(s, e)| {
            run.read_records(s, e).unwrap().iter().all(|r| r.page_id.0 < 500)
        }));
    }

    #[test]
    fn single_record_run_has_one_block() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive_0_100.run");
        std::fs::write(&path, encode_run(Lsn(0), Lsn(100), &[rec(7, 16, 4)], 4096)).unwrap();
        let run = RunFile::open(&path).unwrap();
        assert_eq!(run.block_index().len(), 1);
        assert!(run.bloom().may_contain(PageId(7)));
    }

    #[test]
    fn damaged_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive_0_100.run");
        let mut bytes = encode_run(Lsn(0), Lsn(100), &[rec(7, 16, 4)], 4096);
        bytes[40] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            RunFile::open(&path),
            Err(ArchiveError::CorruptRun { .. })
        ));
    }
}
