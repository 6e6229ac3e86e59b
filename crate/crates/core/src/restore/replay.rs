//! Redo replay and single-page repair.

use crate::backup::BackupImage;
use crate::storage::Page;
use crate::types::PageId;
use crate::wal::{LogRecord, Wal};

use super::RestoreError;

/// Applies `rec` if it is newer than the page. Returns whether it applied.
///
/// # Panics
///
/// If `rec` belongs to another page.
pub fn apply_record(page: &mut Page, rec: &LogRecord) -> bool {
    assert_eq!(rec.page_id, page.id, "log record for the wrong page");
    if rec.lsn <= page.lsn {
        return false;
    }
    page.apply_op(&rec.op);
    page.lsn = rec.lsn;
    true
}

/// Replays records (in LSN order, all for this page) onto `page`. Records
/// at or below the page LSN are skipped, so replay is idempotent. Returns
/// the number of records applied.
pub fn replay<'a>(page: &mut Page, records: impl IntoIterator<Item = &'a LogRecord>) -> usize {
    records
        .into_iter()
        .filter(|r| apply_record(page, r))
        .count()
}

/// Rebuilds the current image of one page from the backup and the page's
/// backward chain in the log, without touching restore state.
pub fn single_page_repair(page_id: PageId, backup: &BackupImage, wal: &Wal) -> Result<Page, RestoreError> {
    let mut page = backup.fetch_page(page_id)?;
    let Some(head) = wal.head(page_id) else {
        return Ok(page);
    };
    let mut chain = wal
        .page_chain_until(page_id, head, backup.min_lsn())
        .collect::<Result<Vec<_>, _>>()?;
    chain.reverse();
    replay(&mut page, &chain);
    Ok(page)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Lsn;
    use crate::wal::LogOp;
    use proptest::prelude::*;

    fn rec(page: u64, lsn: u64, key: u32, v: u8) -> LogRecord {
        LogRecord {
            lsn: Lsn(lsn),
            page_id: PageId(page),
            txn_id: 0,
            prev_page_lsn: Lsn::NULL,
            op: LogOp::Set { key, value: vec![v] },
        }
    }

    #[test]
    fn empty_stream_is_identity() {
        let mut p = Page::empty(PageId(1));
        assert_eq!(replay(&mut p, &[]), 0);
        assert_eq!(p, Page::empty(PageId(1)));
    }

    #[test]
    fn only_newer_records_apply() {
        let mut p = Page::empty(PageId(1));
        p.lsn = Lsn(50);
        let applied = replay(&mut p, &[rec(1, 40, 1, 1), rec(1, 60, 2, 2)]);
        assert_eq!(applied, 1);
        assert_eq!(p.lsn, Lsn(60));
        assert!(!p.records.contains_key(&1));
        assert_eq!(p.records[&2], vec![2]);
    }

    #[test]
    #[should_panic(expected = "wrong page")]
    fn wrong_page_is_a_logic_error() {
        let mut p = Page::empty(PageId(1));
        replay(&mut p, &[rec(2, 20, 1, 1)]);
    }

    proptest! {
        #[test]
        fn replay_is_idempotent(ops in prop::collection::vec((0u32..6, any::<u8>(), any::<bool>()), 0..60)) {
            let records: Vec<LogRecord> = ops
                .iter()
                .enumerate()
                .map(|(i, &(key, v, del))| LogRecord {
                    lsn: Lsn(16 + i as u64 * 10),
                    page_id: PageId(3),
                    txn_id: 0,
                    prev_page_lsn: Lsn::NULL,
                    op: if del { LogOp::Delete { key } } else { LogOp::Set { key, value: vec![v] } },
                })
                .collect();
            let mut once = Page::empty(PageId(3));
            replay(&mut once, &records);
            let mut twice = once.clone();
            prop_assert_eq!(replay(&mut twice, &records), 0);
            prop_assert_eq!(&twice, &once);
            // A split replay equals a whole one.
            let mut split = Page::empty(PageId(3));
            let mid = records.len() / 2;
            replay(&mut split, &records[..mid]);
            replay(&mut split, &records);
            prop_assert_eq!(split, once);
        }
    }
}
