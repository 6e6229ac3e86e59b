//! Synthetic skewed update workload.
//!
//! Pages are drawn from a Zipf distribution over a working set of
//! `hot_pages` ranks. Consecutive ranks fill extents of `extent_pages`
//! contiguous pages, and extent `k` is placed at extent slot
//! `k * m mod extent_count` for a multiplier `m` coprime with the extent
//! count. Hot data thus clusters the way allocation in extents clusters it,
//! while the hot extents are spread over the volume. With one-page extents
//! every page is placed independently.
//!
//! Worker `w` only writes keys `w * keys_per_worker ..`, and the values it
//! writes depend only on its own transaction sequence. The final content of
//! the database therefore depends on how many transactions each worker ran,
//! never on how their updates interleaved.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};
use segrestore::wal::LogOp;
use segrestore::PageId;

use crate::config::WorkloadConfig;

#[derive(Clone, Debug)]
pub struct AccessGenerator {
    page_count: u64,
    hot_pages: u64,
    extent_pages: u64,
    extent_count: u64,
    multiplier: u64,
    zipf: Option<Zipf<f64>>,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl AccessGenerator {
    pub fn new(page_count: u64, hot_pages: u64, skew: f64, extent_pages: u64) -> Self {
        assert!(hot_pages > 0 && hot_pages <= page_count, "working set out of range");
        assert!(skew.is_finite() && skew >= 0.0, "skew must be >= 0");
        assert!(extent_pages > 0, "extent must hold a page");
        let extent_count = page_count.div_ceil(extent_pages);
        let mut multiplier = ((extent_count as f64) * 0.618_033_988_75) as u64 | 1;
        while gcd(multiplier, extent_count) != 1 {
            multiplier += 1;
        }
        let zipf = (skew > 0.0).then(|| Zipf::new(hot_pages as f64, skew).expect("valid zipf parameters"));
        AccessGenerator {
            page_count,
            hot_pages,
            extent_pages,
            extent_count,
            multiplier,
            zipf,
        }
    }

    pub fn for_config(cfg: &WorkloadConfig) -> Self {
        Self::new(cfg.page_count, cfg.hot_pages, cfg.skew, cfg.extent_pages)
    }

    pub fn hot_pages(&self) -> u64 {
        self.hot_pages
    }

    /// Popularity rank of the next access, 0 being the hottest.
    pub fn rank<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.zipf {
            Some(z) => (z.sample(rng) as u64).clamp(1, self.hot_pages) - 1,
            None => rng.random_range(0..self.hot_pages),
        }
    }

    pub fn page_of_rank(&self, rank: u64) -> PageId {
        // The placement permutes [0, extent_count * extent_pages); a
        // partial last extent may map past the volume, in which case the
        // permutation is applied again until it lands inside.
        let e = self.extent_pages;
        let mut x = rank;
        loop {
            let slot = (((x / e) as u128 * self.multiplier as u128) % self.extent_count as u128) as u64;
            let page = slot * e + x % e;
            if page < self.page_count {
                return PageId(page);
            }
            x = page;
        }
    }

    pub fn generate_access<R: Rng + ?Sized>(&self, rng: &mut R) -> PageId {
        self.page_of_rank(self.rank(rng))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedOp {
    pub page: PageId,
    pub op: LogOp,
}

#[derive(Clone, Debug)]
pub struct Txn {
    pub id: u64,
    pub ops: Vec<PlannedOp>,
}

/// Deterministic transaction source for one worker.
#[derive(Debug)]
pub struct WorkerStream {
    worker: u32,
    rng: StdRng,
    generator: AccessGenerator,
    max_ops: usize,
    keys: u32,
    value_len: usize,
    delete_ratio: f64,
    seq: u64,
}

pub fn worker_seed(seed: u64, worker: u32) -> u64 {
    let mut z = seed ^ (worker as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl WorkerStream {
    pub fn new(cfg: &WorkloadConfig, generator: AccessGenerator, worker: u32) -> Self {
        WorkerStream {
            worker,
            rng: StdRng::seed_from_u64(worker_seed(cfg.seed, worker)),
            generator,
            max_ops: cfg.max_ops_per_txn,
            keys: cfg.keys_per_worker,
            value_len: cfg.value_len,
            delete_ratio: cfg.delete_ratio,
            seq: 0,
        }
    }

    /// Transactions handed out so far.
    pub fn issued(&self) -> u64 {
        self.seq
    }

    pub fn next_txn(&mut self) -> Txn {
        let seq = self.seq;
        self.seq += 1;
        let n = self.rng.random_range(1..=self.max_ops);
        let ops = (0..n)
            .map(|i| {
                let page = self.generator.generate_access(&mut self.rng);
                let key = self.worker * self.keys + self.rng.random_range(0..self.keys);
                let op = if self.rng.random_bool(self.delete_ratio) {
                    LogOp::Delete { key }
                } else {
                    LogOp::Set {
                        key,
                        value: value_bytes(self.worker, seq, i as u32, self.value_len),
                    }
                };
                PlannedOp { page, op }
            })
            .collect();
        Txn {
            id: ((self.worker as u64) << 40) | seq,
            ops,
        }
    }
}

fn value_bytes(worker: u32, seq: u64, op: u32, len: usize) -> Vec<u8> {
    let mut tag = Vec::with_capacity(16);
    tag.extend_from_slice(&worker.to_le_bytes());
    tag.extend_from_slice(&seq.to_le_bytes());
    tag.extend_from_slice(&op.to_le_bytes());
    tag.iter().copied().cycle().take(len).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_over_two_pages() {
        let g = AccessGenerator::new(2, 2, 0.0, 1);
        let mut rng = StdRng::seed_from_u64(1);
        let draws = 100_000;
        let zeros = (0..draws).filter(|_| g.generate_access(&mut rng) == PageId(0)).count();
        let share = zeros as f64 / draws as f64;
        assert!((share - 0.5).abs() < 0.02, "share {share}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let g = AccessGenerator::new(1000, 500, 0.8, 8);
        let a: Vec<_> = {
            let mut r = StdRng::seed_from_u64(7);
            (0..1000).map(|_| g.generate_access(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = StdRng::seed_from_u64(7);
            (0..1000).map(|_| g.generate_access(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn top_percent_share_matches_zipf_mass() {
        let n = 10_000u64;
        let g = AccessGenerator::new(n, n, 1.0, 1);
        let mut rng = StdRng::seed_from_u64(3);
        let draws = 1_000_000;
        let top = n / 100;
        let hits = (0..draws).filter(|_| g.rank(&mut rng) < top).count();
        let share = hits as f64 / draws as f64;
        let harmonic = |k: u64| (1..=k).map(|i| 1.0 / i as f64).sum::<f64>();
        let expected = harmonic(top) / harmonic(n);
        assert!(share > 0.20, "share {share}");
        assert!((share - expected).abs() < 0.01, "share {share}, zipf mass {expected}");
    }

    #[test]
    fn rank_mapping_is_a_permutation() {
        for n in [1u64, 2, 64, 100, 1024, 4097] {
            for extent in [1u64, 3, 8, 128, 5000] {
                let g = AccessGenerator::new(n, n, 0.5, extent);
                let mut seen = vec![false; n as usize];
                for r in 0..n {
                    let p = g.page_of_rank(r).0 as usize;
                    assert!(!seen[p], "n={n} extent={extent} rank={r}");
                    seen[p] = true;
                }
            }
        }
    }

    #[test]
    fn single_page_extents_scatter_hot_pages() {
        let g = AccessGenerator::new(32_768, 16_384, 0.8, 1);
        let mut segs = std::collections::HashSet::new();
        for r in 0..1024 {
            segs.insert(g.page_of_rank(r).0 / 128);
        }
        assert_eq!(segs.len(), 256);
    }

    #[test]
    fn extents_keep_consecutive_ranks_together() {
        let g = AccessGenerator::new(32_768, 16_384, 0.8, 128);
        for extent in 0..128 {
            let first = g.page_of_rank(extent * 128).0;
            assert_eq!(first % 128, 0);
            for i in 0..128 {
                assert_eq!(g.page_of_rank(extent * 128 + i).0, first + i);
            }
        }
        let slots: std::collections::HashSet<_> = (0..128).map(|k| g.page_of_rank(k * 128).0 / 128).collect();
        assert_eq!(slots.len(), 128);
        assert!(slots.iter().any(|&s| s >= 128), "hot extents spread over the volume");
    }

    #[test]
    fn workers_write_disjoint_keys() {
        let cfg = WorkloadConfig::default();
        let g = AccessGenerator::for_config(&cfg);
        for w in 0..cfg.workers as u32 {
            let mut s = WorkerStream::new(&cfg, g.clone(), w);
            for _ in 0..200 {
                let t = s.next_txn();
                assert!((1..=cfg.max_ops_per_txn).contains(&t.ops.len()));
                for op in t.ops {
                    let key = match op.op {
                        LogOp::Set { key, ref value } => {
                            assert_eq!(value.len(), cfg.value_len);
                            key
                        }
                        LogOp::Delete { key } => key,
                    };
                    assert_eq!(key / cfg.keys_per_worker, w);
                }
            }
        }
    }
}
