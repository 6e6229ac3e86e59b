//! k-way merge of runs sorted by `(page_id, lsn)`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::types::{Lsn, PageId};
use crate::wal::LogRecord;

/// Records from several sorted inputs, yielded in global `(page_id, lsn)`
/// order.
pub struct MergedLogStream {
    inputs: Vec<std::vec::IntoIter<LogRecord>>,
    heads: BinaryHeap<Reverse<(PageId, Lsn, usize)>>,
    pending: Vec<Option<LogRecord>>,
    inputs_used: usize,
}

impl MergedLogStream {
    pub fn new(inputs: Vec<Vec<LogRecord>>) -> Self {
        let inputs_used = inputs.iter().filter(|v| !v.is_empty()).count();
        let mut inputs: Vec<_> = inputs.into_iter().map(Vec::into_iter).collect();
        let mut heads = BinaryHeap::with_capacity(inputs.len());
        let mut pending = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.iter_mut().enumerate() {
            let head = input.next();
            if let Some(r) = &head {
                heads.push(Reverse((r.page_id, r.lsn, i)));
            }
            pending.push(head);
        }
        MergedLogStream {
            inputs,
            heads,
            pending,
            inputs_used,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    /// Number of non-empty inputs the stream merges.
    pub fn fan_in(&self) -> usize {
        self.inputs_used
    }
}

impl Iterator for MergedLogStream {
    type Item = LogRecord;

    fn next(&mut self) -> Option<LogRecord> {
        let Reverse((_, _, i)) = self.heads.pop()?;
        let out = self.pending[i].take().expect("heap entry has a pending record");
        if let Some(r) = self.inputs[i].next() {
            self.heads.push(Reverse((r.page_id, r.lsn, i)));
            self.pending[i] = Some(r);
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wal::LogOp;
    use proptest::prelude::*;

    fn rec(page: u64, lsn: u64) -> LogRecord {
        LogRecord {
            lsn: Lsn(lsn),
            page_id: PageId(page),
            txn_id: 0,
            prev_page_lsn: Lsn::NULL,
            op: LogOp::Delete { key: 0 },
        }
    }

    #[test]
    fn merges_in_page_then_lsn_order() {
        let a = vec![rec(1, 10), rec(3, 5)];
        let b = vec![rec(1, 20), rec(2, 1)];
        let out: Vec<(u64, u64)> = MergedLogStream::new(vec![a, vec![], b])
            .map(|r| (r.page_id.0, r.lsn.0))
            .collect();
        assert_eq!(out, vec![(1, 10), (1, 20), (2, 1), (3, 5)]);
    }

    proptest! {
        #[test]
        fn output_is_sorted_union(inputs in prop::collection::vec(
            prop::collection::vec((0u64..50, 1u64..10_000), 0..40), 0..70)
        ) {
            let mut next_lsn = 0u64;
            let inputs: Vec<Vec<LogRecord>> = inputs
                .into_iter()
                .map(|v| {
                    let mut v: Vec<LogRecord> = v
                        .into_iter()
                        .map(|(p, _)| { next_lsn += 1; rec(p, next_lsn) })
                        .collect();
                    v.sort_by_key(|r| (r.page_id, r.lsn));
                    v
                })
                .collect();
            let mut expected: Vec<LogRecord> = inputs.iter().flatten().cloned().collect();
            expected.sort_by_key(|r| (r.page_id, r.lsn));
            let got: Vec<LogRecord> = MergedLogStream::new(inputs).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
