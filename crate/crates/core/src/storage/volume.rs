//! Volume files: a small header followed by `page_count` raw page images.
//!
//! Database and replacement volumes use the header
//! `[b"SGRV1"][page_size u32][page_count u64][pages_per_segment u32]`
//! (little-endian), immediately followed by the page images.

use std::sync::Arc;

use super::device::Device;
use super::page::Page;
use super::StorageError;
use crate::types::{Geometry, PageId, SegmentId};

pub const VOLUME_MAGIC: &[u8; 5] = b"SGRV1";
pub const VOLUME_HEADER_LEN: usize = 5 + 4 + 8 + 4;

/// Pages that are formatted or copied per device operation when a whole
/// volume is written.
const BULK_PAGES: u64 = 128;

pub fn encode_volume_header(g: &Geometry) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN);
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&(g.page_size as u32).to_le_bytes());
    out.extend_from_slice(&g.page_count.to_le_bytes());
    out.extend_from_slice(&(g.pages_per_segment as u32).to_le_bytes());
    out
}

pub fn decode_volume_header(buf: &[u8]) -> Result<Geometry, StorageError> {
    if buf.len() < VOLUME_HEADER_LEN || &buf[..5] != VOLUME_MAGIC {
        return Err(StorageError::BadHeader("volume magic"));
    }
    let page_size = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    let page_count = u64::from_le_bytes(buf[9..17].try_into().unwrap());
    let pps = u32::from_le_bytes(buf[17..21].try_into().unwrap()) as u64;
    if page_size == 0 || page_count == 0 || pps == 0 {
        return Err(StorageError::BadHeader("zero geometry field"));
    }
    Ok(Geometry::new(page_size, page_count, pps))
}

/// Fixed-size page images at a fixed offset on a device. Shared by volumes
/// and backup images, which differ only in their header.
#[derive(Debug, Clone)]
pub struct PageFile {
    device: Arc<Device>,
    geometry: Geometry,
    data_offset: u64,
}

impl PageFile {
    pub fn new(device: Arc<Device>, geometry: Geometry, data_offset: u64) -> Self {
        PageFile {
            device,
            geometry,
            data_offset,
        }
    }

    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn offset_of(&self, page: PageId) -> u64 {
        self.data_offset + page.0 * self.geometry.page_size as u64
    }

    fn check_range(&self, first: PageId, count: u64) -> Result<(), StorageError> {
        if count == 0 || first.0 + count > self.geometry.page_count {
            return Err(StorageError::InvalidPage(PageId(first.0 + count.saturating_sub(1))));
        }
        Ok(())
    }

    /// Writes an empty, checksummed image for every page.
    pub fn format(&self) -> Result<(), StorageError> {
        let g = self.geometry;
        let mut first = 0;
        while first < g.page_count {
            let count = BULK_PAGES.min(g.page_count - first);
            let pages: Vec<Page> = (first..first + count).map(|p| Page::empty(PageId(p))).collect();
            self.write_pages(PageId(first), &pages)?;
            first += count;
        }
        Ok(())
    }

    pub fn read_raw(&self, first: PageId, count: u64) -> Result<Vec<u8>, StorageError> {
        self.check_range(first, count)?;
        let mut buf = vec![0u8; (count as usize) * self.geometry.page_size];
        self.device.read_at(self.offset_of(first), &mut buf)?;
        Ok(buf)
    }

    pub fn write_raw(&self, first: PageId, bytes: &[u8]) -> Result<(), StorageError> {
        let ps = self.geometry.page_size;
        assert_eq!(bytes.len() % ps, 0, "raw write must be whole pages");
        self.check_range(first, (bytes.len() / ps) as u64)?;
        self.device.write_at(self.offset_of(first), bytes)
    }

    /// Contiguous read of `count` pages as one device operation.
    pub fn read_pages(&self, first: PageId, count: u64) -> Result<Vec<Page>, StorageError> {
        let raw = self.read_raw(first, count)?;
        raw.chunks_exact(self.geometry.page_size)
            .enumerate()
            .map(|(i, img)| Page::decode_for(PageId(first.0 + i as u64), img).map_err(Into::into))
            .collect()
    }

    /// Contiguous write of consecutive pages as one device operation.
    pub fn write_pages(&self, first: PageId, pages: &[Page]) -> Result<(), StorageError> {
        let ps = self.geometry.page_size;
        let mut buf = vec![0u8; pages.len() * ps];
        for (i, (page, img)) in pages.iter().zip(buf.chunks_exact_mut(ps)).enumerate() {
            let expected = PageId(first.0 + i as u64);
            if page.id != expected {
                return Err(StorageError::InvalidPage(page.id));
            }
            page.encode_into(img)?;
        }
        self.write_raw(first, &buf)
    }

    pub fn read_page(&self, id: PageId) -> Result<Page, StorageError> {
        Ok(self.read_pages(id, 1)?.pop().expect("one page"))
    }

    pub fn write_page(&self, page: &Page) -> Result<(), StorageError> {
        self.write_pages(page.id, std::slice::from_ref(page))
    }

    /// Copies every page image to `dest` in bulk, bypassing decoding.
    pub fn copy_to(&self, dest: &PageFile) -> Result<(), StorageError> {
        assert_eq!(self.geometry.page_size, dest.geometry.page_size);
        assert_eq!(self.geometry.page_count, dest.geometry.page_count);
        let mut first = 0;
        while first < self.geometry.page_count {
            let count = BULK_PAGES.min(self.geometry.page_count - first);
            let raw = self.read_raw(PageId(first), count)?;
            dest.write_raw(PageId(first), &raw)?;
            first += count;
        }
        Ok(())
    }

    /// All page images, read without latency or failure checks.
    pub fn peek_image(&self) -> std::io::Result<Vec<u8>> {
        let mut buf = vec![0u8; self.geometry.volume_bytes() as usize];
        self.device.peek_at(self.data_offset, &mut buf)?;
        Ok(buf)
    }
}

/// A database or replacement volume.
#[derive(Debug, Clone)]
pub struct Volume {
    file: PageFile,
}

impl Volume {
    /// Writes the header and formats every page.
    pub fn create(device: Arc<Device>, geometry: Geometry) -> Result<Volume, StorageError> {
        device.write_at(0, &encode_volume_header(&geometry))?;
        let file = PageFile::new(device, geometry, VOLUME_HEADER_LEN as u64);
        file.format()?;
        Ok(Volume { file })
    }

    /// Writes only the header; pages are expected to be filled by restore.
    pub fn create_unformatted(device: Arc<Device>, geometry: Geometry) -> Result<Volume, StorageError> {
        device.write_at(0, &encode_volume_header(&geometry))?;
        device.set_len(VOLUME_HEADER_LEN as u64 + geometry.volume_bytes())?;
        Ok(Volume {
            file: PageFile::new(device, geometry, VOLUME_HEADER_LEN as u64),
        })
    }

    pub fn open(device: Arc<Device>) -> Result<Volume, StorageError> {
        let mut header = [0u8; VOLUME_HEADER_LEN];
        device.read_at(0, &mut header)?;
        let geometry = decode_volume_header(&header)?;
        Ok(Volume {
            file: PageFile::new(device, geometry, VOLUME_HEADER_LEN as u64),
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.file.geometry()
    }

    pub fn device(&self) -> &Arc<Device> {
        self.file.device()
    }

    pub fn pages(&self) -> &PageFile {
        &self.file
    }

    pub fn read_page(&self, id: PageId) -> Result<Page, StorageError> {
        self.file.read_page(id)
    }

    pub fn write_page(&self, page: &Page) -> Result<(), StorageError> {
        self.file.write_page(page)
    }

    pub fn read_pages(&self, first: PageId, count: u64) -> Result<Vec<Page>, StorageError> {
        self.file.read_pages(first, count)
    }

    pub fn write_pages(&self, first: PageId, pages: &[Page]) -> Result<(), StorageError> {
        self.file.write_pages(first, pages)
    }

    /// Reads the pages of one segment (per the volume geometry) as one
    /// contiguous transfer.
    pub fn read_segment(&self, segment: SegmentId) -> Result<Vec<Page>, StorageError> {
        let g = self.geometry();
        if segment.0 >= g.segment_count() {
            return Err(StorageError::InvalidSegment(segment));
        }
        let range = g.segment_pages(segment, 1);
        self.read_pages(PageId(range.start), range.end - range.start)
    }

    pub fn write_segment(&self, segment: SegmentId, pages: &[Page]) -> Result<(), StorageError> {
        let g = self.geometry();
        if segment.0 >= g.segment_count() {
            return Err(StorageError::InvalidSegment(segment));
        }
        let range = g.segment_pages(segment, 1);
        if pages.len() as u64 != range.end - range.start {
            return Err(StorageError::SegmentLength {
                segment,
                expected: range.end - range.start,
                got: pages.len() as u64,
            });
        }
        self.write_pages(PageId(range.start), pages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{self, ClockMode, LatencyModel};
    use crate::storage::device::{DeviceRole, MemBackend};
    use crate::types::Lsn;

    fn mem_volume(pages: u64, pps: u64) -> Volume {
        let dev = Arc::new(Device::in_memory(DeviceRole::Database));
        Volume::create(dev, Geometry::new(512, pages, pps)).unwrap()
    }

    #[test]
    fn header_round_trip() {
        let g = Geometry::new(8192, 32768, 128);
        let bytes = encode_volume_header(&g);
        assert_eq!(bytes.len(), VOLUME_HEADER_LEN);
        assert_eq!(&bytes[..5], b"SGRV1");
        assert_eq!(decode_volume_header(&bytes).unwrap(), g);
    }

    #[test]
    fn open_recovers_geometry() {
        let v = mem_volume(20, 8);
        let reopened = Volume::open(v.device().clone()).unwrap();
        assert_eq!(reopened.geometry(), v.geometry());
        assert_eq!(reopened.read_page(PageId(19)).unwrap(), Page::empty(PageId(19)));
    }

    #[test]
    fn segment_write_then_read() {
        let v = mem_volume(16, 8);
        let mut pages = v.read_segment(SegmentId(1)).unwrap();
        assert_eq!(pages.iter().map(|p| p.id.0).collect::<Vec<_>>(), (8..16).collect::<Vec<_>>());
        for p in &mut pages {
            p.lsn = Lsn(p.id.0 * 10);
            p.records.insert(1, vec![p.id.0 as u8; 4]);
        }
        v.write_segment(SegmentId(1), &pages).unwrap();
        assert_eq!(v.read_segment(SegmentId(1)).unwrap(), pages);
        assert!(matches!(
            v.read_segment(SegmentId(2)),
            Err(StorageError::InvalidSegment(_))
        ));
    }

    #[test]
    fn segment_read_costs_one_fixed_delay() {
        let model = LatencyModel::new(100, 0.5);
        let dev = Arc::new(Device::new(
            DeviceRole::Database,
            Box::new(MemBackend::new()),
            model,
            ClockMode::Virtual,
        ));
        let v = Volume::create(dev, Geometry::new(512, 16, 8)).unwrap();
        let (_, seg_ns) = clock::measure(|| v.read_segment(SegmentId(0)).unwrap());
        let (_, pages_ns) = clock::measure(|| {
            for p in 0..8 {
                v.read_page(PageId(p)).unwrap();
            }
        });
        assert_eq!(seg_ns, model.op_ns + model.cost_ns(8 * 512) - model.op_ns);
        assert_eq!(pages_ns, 8 * model.cost_ns(512));
        assert_eq!(pages_ns - seg_ns, 7 * model.op_ns);
    }

    #[test]
    fn out_of_range_page_is_rejected() {
        let v = mem_volume(4, 2);
        assert!(matches!(v.read_page(PageId(4)), Err(StorageError::InvalidPage(_))));
    }
}
