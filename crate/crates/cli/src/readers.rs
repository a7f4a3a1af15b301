//! `--readers N`: concurrent searchers running against a writer command.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use ivfdb::search::{ann_search, is_ranked};
use ivfdb::synthetic::uniform;
use ivfdb::{Database, Nprobe, SearchRequest, Snapshot};
use serde::Serialize;

#[derive(Debug, Default, Serialize)]
pub struct ReaderReport {
    pub workers: usize,
    pub searches: u64,
    pub versions_seen: usize,
    pub violations: u64,
}

/// Checks one search against the snapshot it ran on.
fn consistent(snap: &Snapshot, q: &[f32]) -> bool {
    let Ok(hits) = ann_search(snap, &SearchRequest::new(q.to_vec(), 10, Nprobe::Auto)) else {
        return false;
    };
    is_ranked(&hits)
        && hits.len() as u64 <= snap.vector_count()
        && hits.iter().all(|h| {
            matches!(snap.get_vector(h.vector_id), Ok(Some(r)) if r.asset_id == h.asset_id)
        })
}

/// Runs `op` while `n` threads search `db`; `n = 0` runs it alone.
pub fn with_readers<T>(db: &Database, n: usize, op: impl FnOnce() -> T) -> (T, Option<ReaderReport>) {
    if n == 0 {
        return (op(), None);
    }
    let stop = AtomicBool::new(false);
    let total = Mutex::new(ReaderReport {
        workers: n,
        ..Default::default()
    });
    let versions = Mutex::new(BTreeSet::new());
    let out = std::thread::scope(|s| {
        for w in 0..n {
            let (stop, total, versions) = (&stop, &total, &versions);
            s.spawn(move || {
                let mut local = ReaderReport::default();
                let mut seen = BTreeSet::new();
                let mut seed = w as u64;
                while !stop.load(Ordering::Relaxed) {
                    let snap = db.snapshot();
                    seen.insert(snap.version());
                    if snap.vector_count() > 0 {
                        let q = uniform(1, snap.dimension(), seed).remove(0);
                        seed += n as u64;
                        local.searches += 1;
                        if !consistent(&snap, &q) {
                            local.violations += 1;
                        }
                    }
                    std::thread::yield_now();
                }
                let mut t = total.lock().unwrap();
                t.searches += local.searches;
                t.violations += local.violations;
                versions.lock().unwrap().extend(seen);
            });
        }
        let out = op();
        stop.store(true, Ordering::Relaxed);
        out
    });
    let mut report = total.into_inner().unwrap();
    report.versions_seen = versions.into_inner().unwrap().len();
    (out, Some(report))
}
