use std::sync::atomic::{AtomicBool, Ordering};

use ivfdb::clustering::ClusteringConfig;
use ivfdb::maintenance::{flush_delta, full_rebuild, MaintenancePolicy};
use ivfdb::search::{ann_search, knn_exact};
use ivfdb::synthetic::uniform;
use ivfdb::{Database, DbConfig, Nprobe, SearchRequest};

const DIM: usize = 6;
const PER_COMMIT: u64 = 20;

/// Every snapshot must show exactly the commits up to its version: a
/// sentinel asset carries the epoch in its first coordinate.
#[test]
fn readers_see_whole_commits() {
    let dir = tempfile::tempdir().unwrap();
    let db = Database::open(dir.path().join("c.db"), DbConfig::new(DIM).sync(false)).unwrap();
    let commit = |epoch: u64| {
        let mut t = db.begin_write().unwrap();
        for (j, v) in uniform(PER_COMMIT as usize, DIM, epoch).iter().enumerate() {
            t.upsert_vectors(&format!("e{epoch}:{j}"), &[v], None).unwrap();
        }
        let mut s = vec![0.0; DIM];
        s[0] = 1000.0 + epoch as f32;
        t.upsert_vectors("sentinel", &[s], None).unwrap();
        t.commit().unwrap();
    };
    commit(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let readers: Vec<_> = (0..4)
            .map(|_| {
                scope.spawn(|| {
                    let mut checked = 0u64;
                    while !stop.load(Ordering::Relaxed) {
                        let snap = db.snapshot();
                        let mut probe = vec![0.0; DIM];
                        probe[0] = 1e6;
                        let top = knn_exact(&snap, &probe, 1).unwrap();
                        let sentinel = snap.get_vector(top[0].vector_id).unwrap().unwrap();
                        assert_eq!(&*sentinel.asset_id, "sentinel");
                        let epoch = (sentinel.embedding[0] - 1000.0) as u64;
                        assert_eq!(snap.vector_count(), (epoch + 1) * PER_COMMIT + 1);
                        let hits = ann_search(&snap, &SearchRequest::new(probe, 1, Nprobe::Auto)).unwrap();
                        assert_eq!(hits[0].vector_id, top[0].vector_id);
                        checked += 1;
                    }
                    checked
                })
            })
            .collect();
        let cfg = ClusteringConfig {
            target_size: 40,
            ..Default::default()
        };
        for epoch in 1..40 {
            commit(epoch);
            if epoch % 5 == 0 {
                flush_delta(&db).unwrap();
            }
            if epoch % 13 == 0 {
                full_rebuild(&db, &cfg, &MaintenancePolicy::default()).unwrap();
            }
        }
        stop.store(true, Ordering::Relaxed);
        for r in readers {
            assert!(r.join().unwrap() > 0);
        }
    });
}

#[test]
fn second_writer_waits_or_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DbConfig::new(2).sync(false).writer_timeout(std::time::Duration::from_millis(50));
    let db = Database::open(dir.path().join("w.db"), cfg).unwrap();
    let held = db.begin_write().unwrap();
    std::thread::scope(|s| {
        let err = s.spawn(|| db.begin_write().err()).join().unwrap();
        assert!(err.is_some());
    });
    drop(held);
    assert!(db.begin_write().is_ok());
}
