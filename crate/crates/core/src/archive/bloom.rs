//! Bloom filter over page ids, using double hashing: probe `i` sets bit
//! `(h1 + i * h2) mod m`.

use crate::types::PageId;

pub const DEFAULT_BITS_PER_KEY: usize = 10;
pub const DEFAULT_HASHES: u32 = 7;
const MIN_BITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    bit_len: u32,
    hashes: u32,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl BloomFilter {
    pub fn new(keys: usize, bits_per_key: usize, hashes: u32) -> Self {
        let bit_len = (keys * bits_per_key).max(MIN_BITS).next_multiple_of(8);
        BloomFilter {
            bits: vec![0; bit_len / 8],
            bit_len: bit_len as u32,
            hashes,
        }
    }

    pub fn with_defaults(keys: usize) -> Self {
        Self::new(keys, DEFAULT_BITS_PER_KEY, DEFAULT_HASHES)
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    fn positions(&self, page: PageId) -> impl Iterator<Item = usize> + '_ {
        let h1 = mix(page.0);
        let h2 = mix(h1) | 1;
        let m = self.bit_len as u64;
        (0..self.hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    pub fn insert(&mut self, page: PageId) {
        let positions: Vec<usize> = self.positions(page).collect();
        for p in positions {
            self.bits[p / 8] |= 1 << (p % 8);
        }
    }

    pub fn may_contain(&self, page: PageId) -> bool {
        self.positions(page)
            .all(|p| self.bits[p / 8] & (1 << (p % 8)) != 0)
    }

    /// `[bit_len u32][bits]`. The hash count is fixed and not stored.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.bit_len.to_le_bytes());
        out.extend_from_slice(&self.bits);
    }

    pub fn decode(buf: &[u8], hashes: u32) -> Option<BloomFilter> {
        let bit_len = u32::from_le_bytes(buf.get(..4)?.try_into().ok()?);
        if bit_len == 0 || bit_len % 8 != 0 {
            return None;
        }
        let bits = buf.get(4..4 + bit_len as usize / 8)?.to_vec();
        Some(BloomFilter {
            bits,
            bit_len,
            hashes,
        })
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.bits.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn false_positive_rate_at_design_load() {
        let n = 4096;
        let mut f = BloomFilter::with_defaults(n);
        for p in 0..n as u64 {
            f.insert(PageId(p * 3));
        }
        let trials = 100_000u64;
        let fp = (0..trials)
            .map(|i| PageId(1_000_000 + i * 3 + 1))
            .filter(|&p| f.may_contain(p))
            .count();
        let rate = fp as f64 / trials as f64;
        assert!(rate < 0.05, "false positive rate {rate}");
    }

    #[test]
    fn codec_round_trip() {
        let mut f = BloomFilter::with_defaults(10);
        f.insert(PageId(42));
        let mut buf = Vec::new();
        f.encode(&mut buf);
        assert_eq!(buf.len(), f.encoded_len());
        let g = BloomFilter::decode(&buf, DEFAULT_HASHES).unwrap();
        assert_eq!(f, g);
        assert!(g.may_contain(PageId(42)));
    }

    proptest! {
        #[test]
        fn no_false_negatives(pages in prop::collection::vec(any::<u64>(), 0..500)) {
            let mut f = BloomFilter::with_defaults(pages.len());
            for &p in &pages {
                f.insert(PageId(p));
            }
            for &p in &pages {
                prop_assert!(f.may_contain(PageId(p)));
            }
        }
    }
}
