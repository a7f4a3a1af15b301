//! Model-based checks of the public API against a brute-force reference.

use std::collections::BTreeMap;

use ivfdb::batch::{execute_batch, QueryBatch};
use ivfdb::clustering::ClusteringConfig;
use ivfdb::hybrid::{hybrid_search, postfilter_search, prefilter_search, HybridMode, Predicate};
use ivfdb::maintenance::{flush_delta, full_rebuild, MaintenancePolicy};
use ivfdb::search::{ann_search, is_ranked, knn_exact, recall_at_k};
use ivfdb::storage::{AttributeRecord, Schema, Value};
use ivfdb::{Database, DbConfig, Hit, Metric, Nprobe, SearchRequest, Snapshot};
use proptest::prelude::*;

const DIM: usize = 5;

#[derive(Debug, Clone)]
enum Op {
    Upsert { asset: u8, vectors: Vec<Vec<f32>>, n: i64 },
    Delete(u8),
    Commit,
    Flush,
    Rebuild(usize),
}

fn vector() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((-20i32..20).prop_map(|x| x as f32 / 4.0), DIM)
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u8..40, prop::collection::vec(vector(), 1..4), 0i64..10)
            .prop_map(|(asset, vectors, n)| Op::Upsert { asset, vectors, n }),
        2 => (0u8..40).prop_map(Op::Delete),
        2 => Just(Op::Commit),
        1 => Just(Op::Flush),
        1 => (2usize..20).prop_map(Op::Rebuild),
    ]
}

/// Committed content: asset -> (vectors, n attribute).
type Model = BTreeMap<String, (Vec<Vec<f32>>, i64)>;

fn sq(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Top-k reference distances. Ties make ids ambiguous, so only distances
/// are compared.
fn reference(model: &Model, q: &[f32], k: usize, keep: impl Fn(i64) -> bool) -> Vec<f32> {
    let mut d: Vec<f32> = model
        .values()
        .filter(|(_, n)| keep(*n))
        .flat_map(|(vs, _)| vs.iter().map(|v| sq(v, q)))
        .collect();
    d.sort_by(f32::total_cmp);
    d.truncate(k);
    d
}

fn distances(hits: &[Hit]) -> Vec<f32> {
    hits.iter().map(|h| h.distance).collect()
}

fn open(dir: &tempfile::TempDir) -> Database {
    let cfg = DbConfig::new(DIM)
        .schema(Schema::parse("n:int").unwrap())
        .sync(false)
        .segment_capacity(16);
    Database::open(dir.path().join("p.db"), cfg).unwrap()
}

fn check(snap: &Snapshot, model: &Model, queries: &[Vec<f32>]) -> Result<(), TestCaseError> {
    let vectors: usize = model.values().map(|(v, _)| v.len()).sum();
    prop_assert_eq!(snap.vector_count() as usize, vectors);
    prop_assert_eq!(snap.asset_count(), model.len());
    let all = snap.partition_ids().len().max(1);
    let small = Predicate::parse("n < 4").unwrap();
    for q in queries {
        let exact = knn_exact(snap, q, 7).unwrap();
        prop_assert!(is_ranked(&exact));
        prop_assert_eq!(distances(&exact), reference(model, q, 7, |_| true));
        for h in &exact {
            let (vs, _) = &model[&*h.asset_id];
            prop_assert!(vs.iter().any(|v| sq(v, q) == h.distance));
        }

        let full = ann_search(snap, &SearchRequest::new(q.clone(), 7, all)).unwrap();
        prop_assert_eq!(distances(&full), distances(&exact));
        let one = ann_search(snap, &SearchRequest::new(q.clone(), 7, 1usize)).unwrap();
        prop_assert!(is_ranked(&one) && one.len() <= exact.len());

        let pre = prefilter_search(snap, q, 7, &small).unwrap();
        prop_assert_eq!(distances(&pre), reference(model, q, 7, |n| n < 4));
        let post = postfilter_search(snap, q, 7, Nprobe::Fixed(1), &small).unwrap();
        for h in &post {
            prop_assert!(model[&*h.asset_id].1 < 4);
        }
        let (auto, _) = hybrid_search(snap, q, 7, Nprobe::Fixed(all), &small, HybridMode::Auto, None).unwrap();
        prop_assert_eq!(distances(&auto), distances(&pre));
    }
    let batch = execute_batch(snap, &QueryBatch::new(queries.to_vec(), 7, 2usize)).unwrap();
    for (q, got) in queries.iter().zip(&batch.results) {
        let want = ann_search(snap, &SearchRequest::new(q.clone(), 7, 2usize)).unwrap();
        prop_assert_eq!(got, &want);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_histories_match_model(ops in prop::collection::vec(op(), 1..40), queries in prop::collection::vec(vector(), 3)) {
        let dir = tempfile::tempdir().unwrap();
        let db = open(&dir);
        let mut model = Model::new();
        let mut staged = model.clone();
        let mut txn = Some(db.begin_write().unwrap());
        for op in ops {
            match op {
                Op::Upsert { asset, vectors, n } => {
                    let id = format!("a{asset}");
                    let rec = AttributeRecord::new().with("n", Value::Int(n));
                    txn.as_mut().unwrap().upsert_vectors(&id, &vectors, Some(&rec)).unwrap();
                    staged.insert(id, (vectors, n));
                }
                Op::Delete(asset) => {
                    let id = format!("a{asset}");
                    let removed = txn.as_mut().unwrap().delete_asset(&id).unwrap();
                    let had = staged.remove(&id).map_or(0, |(v, _)| v.len());
                    prop_assert_eq!(removed, had);
                }
                Op::Commit | Op::Flush | Op::Rebuild(_) => {
                    txn.take().unwrap().commit().unwrap();
                    model = staged.clone();
                    check(&db.snapshot(), &model, &queries)?;
                    match op {
                        Op::Flush => {
                            let r = flush_delta(&db).unwrap();
                            prop_assert_eq!(db.snapshot().delta_count(), if db.snapshot().centroid_count() == 0 {
                                db.snapshot().vector_count()
                            } else {
                                0
                            });
                            prop_assert!(r.row_writes >= r.vectors_moved);
                        }
                        Op::Rebuild(t) if !model.is_empty() => {
                            let cfg = ClusteringConfig { target_size: t, ..Default::default() };
                            full_rebuild(&db, &cfg, &MaintenancePolicy::default()).unwrap();
                            prop_assert_eq!(db.snapshot().delta_count(), 0);
                        }
                        _ => {}
                    }
                    check(&db.snapshot(), &model, &queries)?;
                    txn = Some(db.begin_write().unwrap());
                }
            }
        }
        txn.take().unwrap().rollback();
        check(&db.snapshot(), &model, &queries)?;
        drop(txn);
        drop(db);
        let db = open(&dir);
        check(&db.snapshot(), &model, &queries)?;
    }

    #[test]
    fn recall_grows_with_nprobe(seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let db = Database::open(dir.path().join("r.db"), DbConfig::new(8).sync(false)).unwrap();
        let data = ivfdb::synthetic::Clustered::new(8, 10, 0.3, seed).take_vec(1500);
        let mut t = db.begin_write().unwrap();
        for (i, v) in data.iter().enumerate() {
            t.upsert_vectors(&format!("v{i}"), &[v], None).unwrap();
        }
        t.commit().unwrap();
        let cfg = ClusteringConfig { target_size: 50, seed, ..Default::default() };
        full_rebuild(&db, &cfg, &MaintenancePolicy::default()).unwrap();
        let snap = db.snapshot();
        let qs = ivfdb::synthetic::uniform(5, 8, seed + 1);
        let mut last = vec![0.0; qs.len()];
        for n in [1usize, 2, 4, 8, 16, 30] {
            for (q, prev) in qs.iter().zip(last.iter_mut()) {
                let exact = knn_exact(&snap, q, 10).unwrap();
                let got = ann_search(&snap, &SearchRequest::new(q.clone(), 10, n)).unwrap();
                let r = recall_at_k(&got, &exact, 10);
                prop_assert!(r + 1e-12 >= *prev, "nprobe {} recall {} < {}", n, r, prev);
                *prev = r;
            }
        }
        prop_assert!(last.iter().all(|&r| r == 1.0));
    }
}

#[test]
fn cosine_search_ignores_scale() {
    let dir = tempfile::tempdir().unwrap();
    let db = Database::open(dir.path().join("c.db"), DbConfig::new(3).metric(Metric::Cosine).sync(false)).unwrap();
    let mut t = db.begin_write().unwrap();
    t.upsert_vectors("x", &[[1.0, 0.0, 0.0]], None).unwrap();
    t.upsert_vectors("y", &[[0.0, 5.0, 0.0]], None).unwrap();
    t.upsert_vectors("xy", &[[3.0, 3.0, 0.0]], None).unwrap();
    t.commit().unwrap();
    let hits = knn_exact(&db.snapshot(), &[100.0, 0.0, 0.0], 3).unwrap();
    let order: Vec<&str> = hits.iter().map(|h| &*h.asset_id).collect();
    assert_eq!(order, ["x", "xy", "y"]);
    assert!(hits[0].distance.abs() < 1e-6);
    assert!((hits[2].distance - 1.0).abs() < 1e-6);
    assert!(knn_exact(&db.snapshot(), &[0.0, 0.0, 0.0], 3).unwrap_err().is_validation());
}
