//! Three-state segment bitmap.

use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use crate::types::SegmentId;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SegmentState {
    NotRestored = 0,
    Restoring = 1,
    Restored = 2,
}

impl SegmentState {
    fn from_u8(v: u8) -> SegmentState {
        match v {
            0 => SegmentState::NotRestored,
            1 => SegmentState::Restoring,
            2 => SegmentState::Restored,
            _ => unreachable!("invalid segment state {v}"),
        }
    }
}

/// Per-segment restore state. Every transition is a compare-and-swap, so
/// exactly one caller wins `NotRestored -> Restoring`.
#[derive(Debug)]
pub struct SegmentBitmap {
    states: Box<[AtomicU8]>,
    restored: AtomicU64,
}

impl SegmentBitmap {
    pub fn new(segments: u64) -> Self {
        SegmentBitmap {
            states: (0..segments).map(|_| AtomicU8::new(0)).collect(),
            restored: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> u64 {
        self.states.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, s: SegmentId) -> SegmentState {
        SegmentState::from_u8(self.states[s.0 as usize].load(Ordering::SeqCst))
    }

    pub fn is_restored(&self, s: SegmentId) -> bool {
        self.state(s) == SegmentState::Restored
    }

    fn transition(&self, s: SegmentId, from: SegmentState, to: SegmentState) -> bool {
        self.states[s.0 as usize]
            .compare_exchange(from as u8, to as u8, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    /// `NotRestored -> Restoring`; true for the single winner.
    pub fn try_claim(&self, s: SegmentId) -> bool {
        self.transition(s, SegmentState::NotRestored, SegmentState::Restoring)
    }

    /// `Restoring -> Restored`.
    pub fn mark_restored(&self, s: SegmentId) {
        let ok = self.transition(s, SegmentState::Restoring, SegmentState::Restored);
        assert!(ok, "{s} marked restored without being claimed");
        self.restored.fetch_add(1, Ordering::SeqCst);
    }

    /// `Restoring -> NotRestored`, after a failed attempt.
    pub fn revert(&self, s: SegmentId) {
        let ok = self.transition(s, SegmentState::Restoring, SegmentState::NotRestored);
        assert!(ok, "{s} reverted without being claimed");
    }

    pub fn restored_count(&self) -> u64 {
        self.restored.load(Ordering::SeqCst)
    }

    pub fn is_complete(&self) -> bool {
        self.restored_count() == self.len()
    }

    /// First segment at or after `from` (wrapping around) that is
    /// `NotRestored`.
    pub fn next_not_restored(&self, from: u64) -> Option<SegmentId> {
        let n = self.len();
        (0..n)
            .map(|i| SegmentId((from + i) % n))
            .find(|&s| self.state(s) == SegmentState::NotRestored)
    }
}
