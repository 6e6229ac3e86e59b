mod support;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use segrestore::archive::{ArchiveConfig, ArchiveDir, ArchiveError, ArchiverConfig, CrashPoint, LogArchiver};
use segrestore::storage::{Device, DeviceRole};
use segrestore::wal::{LogRecord, Wal, WalConfig};
use segrestore::{Lsn, PageId};
use support::{probe_oracle, random_op, rng};

fn filled_wal(seed: u64, records: usize, pages: u64) -> Arc<Wal> {
    let wal = Arc::new(Wal::create(Arc::new(Device::in_memory(DeviceRole::Log)), WalConfig::default()).unwrap());
    let mut r = rng(seed);
    for i in 0..records {
        // Skewed so some pages have long histories and some none.
        let page = if r.random_bool(0.5) { r.random_range(0..pages / 10) } else { r.random_range(0..pages) };
        wal.append(PageId(page), i as u64, random_op(&mut r)).unwrap();
    }
    wal
}

fn all_wal_records(wal: &Wal) -> Vec<LogRecord> {
    wal.scan(Lsn(0)).map(Result::unwrap).collect()
}

fn multiset(records: impl IntoIterator<Item = LogRecord>) -> HashMap<Lsn, LogRecord> {
    records.into_iter().map(|r| (r.lsn, r)).collect()
}

#[test]
fn random_probes_match_the_oracle_across_merge_schedules() {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(11, 6000, 500);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 97, ..Default::default() });
    let mut r = rng(12);
    let wal_records = all_wal_records(&wal);
    let mut probes = 0;
    while archiver.cursor() < wal.end_lsn() {
        archiver.archive_step(r.random_range(1..400)).unwrap();
        // Random maintenance merges of adjacent runs.
        let snap = dir.snapshot();
        if snap.len() >= 2 && r.random_bool(0.4) {
            let start = r.random_range(0..snap.len() - 1);
            let count = r.random_range(2..=(snap.len() - start).min(8));
            let begins: Vec<Lsn> = snap[start..start + count].iter().map(|x| x.begin()).collect();
            dir.merge_runs(&begins, 8).unwrap();
        }
        // Multiset preservation after every step.
        let archived: Vec<LogRecord> = dir.snapshot().iter().flat_map(|x| x.read_all().unwrap()).collect();
        let upto = dir.archived_upto();
        let expected: Vec<LogRecord> = wal_records.iter().filter(|x| x.lsn < upto).cloned().collect();
        assert_eq!(archived.len(), expected.len());
        assert_eq!(multiset(archived), multiset(expected));

        let snap = dir.snapshot();
        for _ in 0..40 {
            let a = r.random_range(0..520);
            let span = r.random_range(0..60);
            let b = (a + span).min(519);
            let min_lsn = Lsn(r.random_range(0..wal.end_lsn().0 + 10));
            let got: Vec<LogRecord> = dir.probe(PageId(a), PageId(b), min_lsn).unwrap().collect();
            assert_eq!(got, probe_oracle(&snap, PageId(a), PageId(b), min_lsn), "probe [{a}, {b}] from {min_lsn}");
            probes += 1;
        }
    }
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    archiver.maintain().unwrap();
    let snap = dir.snapshot();
    assert!(snap.len() <= 16);
    for _ in 0..200 {
        let a = r.random_range(0..500);
        let b = r.random_range(a..500);
        let got: Vec<LogRecord> = dir.probe(PageId(a), PageId(b), Lsn(0)).unwrap().collect();
        assert_eq!(got, probe_oracle(&snap, PageId(a), PageId(b), Lsn(0)));
        probes += 1;
    }
    assert!(probes >= 1000, "only {probes} probes");
}

#[test]
fn within_a_page_output_follows_append_order() {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(5, 3000, 50);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 128, ..Default::default() });
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    let all = all_wal_records(&wal);
    for p in 0..50 {
        let got: Vec<Lsn> = dir.probe(PageId(p), PageId(p), Lsn(0)).unwrap().map(|r| r.lsn).collect();
        let expected: Vec<Lsn> = all.iter().filter(|r| r.page_id.0 == p).map(|r| r.lsn).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn untouched_range_probes_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(1, 500, 100);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 50, ..Default::default() });
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    assert_eq!(dir.probe(PageId(1000), PageId(2000), Lsn(0)).unwrap().count(), 0);
}

#[test]
fn sixty_four_way_merge_probe() {
    let tmp = tempfile::tempdir().unwrap();
    // Every run touches every page of the probed segment.
    let wal = Arc::new(Wal::create(Arc::new(Device::in_memory(DeviceRole::Log)), WalConfig::default()).unwrap());
    let mut r = rng(64);
    for i in 0..64 * 32 {
        wal.append(PageId((i % 32) as u64), 0, random_op(&mut r)).unwrap();
    }
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 32, ..Default::default() });
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    assert_eq!(dir.run_count(), 64);
    let (stream, reads) = dir.probe_snapshot(&dir.snapshot(), PageId(0), PageId(31), Lsn(0)).unwrap();
    assert_eq!(reads, 64);
    assert_eq!(stream.fan_in(), 64);
    let got: Vec<LogRecord> = stream.collect();
    assert_eq!(got, probe_oracle(&dir.snapshot(), PageId(0), PageId(31), Lsn(0)));
    assert_eq!(got.len(), 64 * 32);
}

#[test]
fn bloom_filters_have_no_false_negatives_and_few_false_positives() {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(99, 20_000, 100_000);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig::default());
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    let (mut fp, mut negatives) = (0u64, 0u64);
    for run in dir.snapshot().iter() {
        let records = run.read_all().unwrap();
        let present: std::collections::HashSet<u64> = records.iter().map(|r| r.page_id.0).collect();
        for &p in &present {
            assert!(run.bloom().may_contain(PageId(p)), "false negative for page {p}");
        }
        for p in 200_000..210_000u64 {
            negatives += 1;
            if run.bloom().may_contain(PageId(p)) {
                fp += 1;
            }
        }
    }
    let rate = fp as f64 / negatives as f64;
    assert!(rate < 0.05, "false positive rate {rate}");
}

fn crash_dir(point: CrashPoint, merge: bool) {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(3, 400, 40);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 100, ..Default::default() });
    archiver.archive_step(300).unwrap();
    assert_eq!(dir.run_count(), 3);
    let before: Vec<LogRecord> = dir.probe(PageId(0), PageId(39), Lsn(0)).unwrap().collect();
    dir.inject_crash(point);
    let err = if merge {
        let begins: Vec<Lsn> = dir.snapshot().iter().map(|r| r.begin()).collect();
        dir.merge_runs(&begins, 8).unwrap_err()
    } else {
        archiver.archive_up_to(wal.end_lsn()).unwrap_err()
    };
    assert!(matches!(err, ArchiveError::InjectedCrash(p) if p == point));

    // Restart: every referenced file is complete and checksummed, the
    // archive is still a gap-free prefix of the log.
    let reopened = ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap();
    let leftovers: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
    let snap = reopened.snapshot();
    assert_eq!(snap.first().unwrap().begin(), Lsn(0));
    for w in snap.windows(2) {
        assert_eq!(w[0].end(), w[1].begin());
    }
    let upto = reopened.archived_upto();
    let after: Vec<LogRecord> = reopened
        .probe(PageId(0), PageId(39), Lsn(0))
        .unwrap()
        .collect();
    let expected: Vec<LogRecord> = all_wal_records(&wal).into_iter().filter(|r| r.lsn < upto).collect();
    assert_eq!(after.len(), expected.len());
    assert_eq!(multiset(after.clone()), multiset(expected));
    if merge {
        assert_eq!(after, before);
    }
    // A fresh archiver continues where the directory left off.
    let dir = Arc::new(reopened);
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig::default());
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    assert_eq!(dir.snapshot().iter().map(|r| r.record_count()).sum::<u64>(), 400);
}

#[test]
fn crash_before_rename_of_a_new_run() {
    crash_dir(CrashPoint::BeforeRename, false);
}

#[test]
fn crash_after_rename_of_a_new_run() {
    crash_dir(CrashPoint::AfterRename, false);
}

#[test]
fn crash_before_rename_of_a_merge() {
    crash_dir(CrashPoint::BeforeRename, true);
}

#[test]
fn crash_after_rename_of_a_merge() {
    crash_dir(CrashPoint::AfterRename, true);
}

#[test]
fn crash_before_deleting_merge_inputs() {
    crash_dir(CrashPoint::BeforeDelete, true);
}

#[test]
fn concurrent_probes_during_merges() {
    let tmp = tempfile::tempdir().unwrap();
    let wal = filled_wal(8, 4000, 200);
    let dir = Arc::new(ArchiveDir::open(tmp.path(), ArchiveConfig::default()).unwrap());
    let mut archiver = LogArchiver::new(wal.clone(), dir.clone(), ArchiverConfig { run_size_limit: 40, fan_in: 4, ..Default::default() });
    archiver.archive_up_to(wal.end_lsn()).unwrap();
    let expected: Vec<LogRecord> = dir.probe(PageId(0), PageId(199), Lsn(0)).unwrap().collect();
    let readers: Vec<_> = (0..3)
        .map(|_| {
            let dir = dir.clone();
            let expected = expected.clone();
            std::thread::spawn(move || {
                for _ in 0..30 {
                    let got: Vec<LogRecord> = dir.probe(PageId(0), PageId(199), Lsn(0)).unwrap().collect();
                    assert_eq!(got, expected);
                }
            })
        })
        .collect();
    archiver.maintain().unwrap();
    for h in readers {
        h.join().unwrap();
    }
    assert!(dir.run_count() <= 8);
}
