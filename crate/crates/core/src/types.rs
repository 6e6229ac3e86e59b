use std::fmt;
use std::ops::Range;

/// Dense page ordinal within a volume.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageId(pub u64);

/// Ordinal of a fixed-size group of contiguous pages.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId(pub u64);

/// Log sequence number. It is the byte offset of a record in the log file,
/// so it is strictly increasing; 0 means "no predecessor".
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lsn(pub u64);

impl Lsn {
    pub const NULL: Lsn = Lsn(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "page {}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "segment {}", self.0)
    }
}

impl fmt::Display for Lsn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lsn {}", self.0)
    }
}

/// Shape of a volume: page size, number of pages and how pages group into
/// segments. The last segment may be shorter when `page_count` is not a
/// multiple of `pages_per_segment`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub page_size: usize,
    pub page_count: u64,
    pub pages_per_segment: u64,
}

impl Geometry {
    pub fn new(page_size: usize, page_count: u64, pages_per_segment: u64) -> Self {
        assert!(page_size > 0 && page_count > 0 && pages_per_segment > 0);
        Geometry {
            page_size,
            page_count,
            pages_per_segment,
        }
    }

    pub fn with_segment_pages(self, pages_per_segment: u64) -> Self {
        Geometry::new(self.page_size, self.page_count, pages_per_segment)
    }

    pub fn segment_count(&self) -> u64 {
        self.page_count.div_ceil(self.pages_per_segment)
    }

    pub fn segment_of(&self, page: PageId) -> SegmentId {
        SegmentId(page.0 / self.pages_per_segment)
    }

    pub fn contains(&self, page: PageId) -> bool {
        page.0 < self.page_count
    }

    /// Page ordinals covered by `count` segments starting at `first`.
    pub fn segment_pages(&self, first: SegmentId, count: u64) -> Range<u64> {
        let start = first.0 * self.pages_per_segment;
        let end = ((first.0 + count) * self.pages_per_segment).min(self.page_count);
        start..end
    }

    pub fn segment_bytes(&self, segment: SegmentId) -> u64 {
        let pages = self.segment_pages(segment, 1);
        (pages.end - pages.start) * self.page_size as u64
    }

    pub fn volume_bytes(&self) -> u64 {
        self.page_count * self.page_size as u64
    }
}
