use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Predicate;
use crate::kernel::{BlockKernel, BlockScratch, Neighbor, TopKHeap, BLOCK_ROWS};
use crate::search::{self, check_k, check_query, Nprobe, ResultSet, ScanTrace};
use crate::storage::{AttributeRecord, Snapshot};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plan {
    PreFilter,
    PostFilter,
}

/// Chosen plan and the estimates behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanChoice {
    pub plan: Plan,
    /// Estimated fraction of rows passing the predicate.
    pub filter_selectivity: f64,
    /// Estimated fraction of rows the IVF probe visits.
    pub ivf_selectivity: f64,
    pub nprobe: usize,
    /// Explicit cut-off replacing `ivf_selectivity` in the rule.
    pub threshold: Option<f64>,
}

/// Which executor `hybrid_search` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridMode {
    #[default]
    Auto,
    PreFilter,
    PostFilter,
}

impl std::str::FromStr for HybridMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" | "optimizer" => Ok(HybridMode::Auto),
            "pre" | "prefilter" => Ok(HybridMode::PreFilter),
            "post" | "postfilter" => Ok(HybridMode::PostFilter),
            other => Err(crate::Error::InvalidArgument(format!("unknown hybrid mode `{other}`"))),
        }
    }
}

/// `n * p / rows`, clamped to `[0, 1]`.
pub fn ivf_selectivity(n: usize, partition_size: f64, rows: u64) -> f64 {
    if rows == 0 {
        return 1.0;
    }
    (n as f64 * partition_size / rows as f64).clamp(0.0, 1.0)
}

/// Pre-filtering wins when the predicate is estimated to keep fewer rows
/// than the probe would visit.
pub fn choose_plan(filter_selectivity: f64, ivf_selectivity: f64, threshold: Option<f64>) -> Plan {
    if filter_selectivity < threshold.unwrap_or(ivf_selectivity) {
        Plan::PreFilter
    } else {
        Plan::PostFilter
    }
}

pub fn estimate_selectivity(snap: &Snapshot, predicate: &Predicate) -> Result<f64> {
    predicate.check(snap.schema())?;
    snap.column_stats().selectivity(predicate)
}

/// Both estimates and the plan they select.
pub fn plan(snap: &Snapshot, predicate: &Predicate, nprobe: Nprobe, threshold: Option<f64>) -> Result<PlanChoice> {
    let filter_selectivity = estimate_selectivity(snap, predicate)?;
    let k = snap.centroid_count();
    let (n, ivf) = if k == 0 {
        (0, 1.0)
    } else {
        let n = search::resolve_nprobe(snap, nprobe)?.min(k);
        let indexed = snap.vector_count() - snap.delta_count();
        let p = if indexed > 0 {
            indexed as f64 / k as f64
        } else {
            snap.index_meta().target_size as f64
        };
        (n, ivf_selectivity(n, p, snap.vector_count()))
    };
    Ok(PlanChoice {
        plan: choose_plan(filter_selectivity, ivf, threshold),
        filter_selectivity,
        ivf_selectivity: ivf,
        nprobe: n,
        threshold,
    })
}

fn row_filter<'a>(snap: &'a Snapshot, predicate: &'a Predicate) -> impl Fn(&str) -> bool + Sync + 'a {
    let table = &snap.state.attributes;
    move |asset: &str| predicate.matches(table.get(asset).map(|r| &**r as &AttributeRecord))
}

/// Estimated selectivity from which prefiltering reads every row in
/// storage order instead of fetching candidates one by one.
pub const SEQUENTIAL_ABOVE: f64 = 0.1;

/// Exact top-`k` among vectors whose asset satisfies the predicate, reading
/// only those vectors.
pub fn prefilter_search(snap: &Snapshot, q: &[f32], k: usize, predicate: &Predicate) -> Result<ResultSet> {
    prefilter_traced(snap, q, k, predicate).map(|r| r.0)
}

pub fn prefilter_traced(snap: &Snapshot, q: &[f32], k: usize, predicate: &Predicate) -> Result<(ResultSet, ScanTrace)> {
    check_query(snap, q)?;
    check_k(k)?;
    predicate.check(snap.schema())?;
    let state = &snap.state;
    let broad = estimate_selectivity(snap, predicate)? >= SEQUENTIAL_ABOVE;
    let candidates = if broad { None } else { predicate.candidates(&state.attributes) };
    let Some(assets) = candidates else {
        // Broad or not narrowed by any index: filtered exhaustive scan.
        let parts = search::all_partitions(snap);
        let (hits, scanned) = if *predicate == Predicate::True {
            search::scan_single::<fn(&str) -> bool>(snap, q, k, &parts, None)?
        } else {
            search::scan_single(snap, q, k, &parts, Some(&row_filter(snap, predicate)))?
        };
        return Ok((
            hits,
            ScanTrace {
                nprobe: 0,
                partitions: parts,
                vectors_scanned: scanned,
            },
        ));
    };
    // segment offset -> (partition, rows)
    let mut groups: BTreeMap<u64, (u32, Vec<(u32, u64, Arc<str>)>)> = BTreeMap::new();
    for asset in assets.iter() {
        if !predicate.matches(state.attributes.get(asset).map(|r| &**r)) {
            continue;
        }
        let Some(ids) = state.assets.get(asset) else {
            continue;
        };
        for &id in ids.iter() {
            let Some(loc) = state.locations.get(&id) else {
                continue;
            };
            groups
                .entry(loc.segment)
                .or_insert_with(|| (loc.partition, Vec::new()))
                .1
                .push((loc.row, id, loc.asset.clone()));
        }
    }
    let dim = snap.dimension();
    let kernel = BlockKernel::for_metric(snap.metric());
    let mut heap = TopKHeap::new(k);
    let mut emb: Vec<f32> = Vec::new();
    let mut meta: Vec<(u64, Arc<str>)> = Vec::new();
    let mut row = Vec::with_capacity(dim);
    let mut scratch = BlockScratch::default();
    let mut out = Vec::new();
    let mut scanned = 0u64;
    let mut partitions: Vec<u32> = Vec::new();
    let mut flush = |emb: &mut Vec<f32>, meta: &mut Vec<(u64, Arc<str>)>, heap: &mut TopKHeap<f32>| -> Result<()> {
        let w = meta.len();
        if w == 0 {
            return Ok(());
        }
        out.resize(w, 0.0);
        kernel.compute(q, emb, dim, &mut scratch, &mut out)?;
        for (&d, (id, asset)) in out.iter().zip(meta.drain(..)) {
            if heap.accepts(d, id) {
                heap.offer(Neighbor {
                    asset_id: asset,
                    vector_id: id,
                    distance: d,
                });
            }
        }
        scanned += w as u64;
        emb.clear();
        Ok(())
    };
    for (offset, (partition, rows)) in groups {
        if !partitions.contains(&partition) {
            partitions.push(partition);
        }
        let loc_seg = state.segments(partition);
        let seg = loc_seg
            .binary_search_by_key(&offset, |s| s.block.offset)
            .map(|i| loc_seg[i])
            .map_err(|_| state.file.corrupt(format!("dangling location for segment {offset}")))?;
        let whole = match state.file.cached_segment(&seg) {
            Some(s) => Some(s),
            None if rows.len() * 8 >= seg.count as usize => Some(state.read_segment(&seg, true)?),
            None => None,
        };
        for (r, id, asset) in rows {
            match &whole {
                Some(s) => {
                    let r = r as usize;
                    emb.extend_from_slice(&s.embeddings[r * dim..(r + 1) * dim]);
                }
                None => {
                    state.file.row(&seg, r, &mut row)?;
                    emb.extend_from_slice(&row);
                }
            }
            meta.push((id, asset));
            if meta.len() == BLOCK_ROWS {
                flush(&mut emb, &mut meta, &mut heap)?;
            }
        }
    }
    flush(&mut emb, &mut meta, &mut heap)?;
    partitions.sort_unstable();
    Ok((
        heap.into_sorted_vec(),
        ScanTrace {
            nprobe: 0,
            partitions,
            vectors_scanned: scanned,
        },
    ))
}

/// IVF probe with the predicate applied while scanning; failing vectors never
/// reach the heaps.
pub fn postfilter_search(snap: &Snapshot, q: &[f32], k: usize, nprobe: Nprobe, predicate: &Predicate) -> Result<ResultSet> {
    postfilter_traced(snap, q, k, nprobe, predicate).map(|r| r.0)
}

pub fn postfilter_traced(snap: &Snapshot, q: &[f32], k: usize, nprobe: Nprobe, predicate: &Predicate) -> Result<(ResultSet, ScanTrace)> {
    check_query(snap, q)?;
    check_k(k)?;
    predicate.check(snap.schema())?;
    let (n, parts) = search::probe_plan(snap, q, nprobe)?.unwrap_or_else(|| (0, search::all_partitions(snap)));
    let keep = row_filter(snap, predicate);
    let (hits, scanned) = if *predicate == Predicate::True {
        search::scan_single::<fn(&str) -> bool>(snap, q, k, &parts, None)?
    } else {
        search::scan_single(snap, q, k, &parts, Some(&keep))?
    };
    Ok((
        hits,
        ScanTrace {
            nprobe: n,
            partitions: parts,
            vectors_scanned: scanned,
        },
    ))
}

/// Estimates, picks a plan (or obeys `mode`), and runs it.
pub fn hybrid_search(
    snap: &Snapshot,
    q: &[f32],
    k: usize,
    nprobe: Nprobe,
    predicate: &Predicate,
    mode: HybridMode,
    threshold: Option<f64>,
) -> Result<(ResultSet, PlanChoice)> {
    check_query(snap, q)?;
    check_k(k)?;
    let mut choice = plan(snap, predicate, nprobe, threshold)?;
    match mode {
        HybridMode::Auto => {}
        HybridMode::PreFilter => choice.plan = Plan::PreFilter,
        HybridMode::PostFilter => choice.plan = Plan::PostFilter,
    }
    let hits = match choice.plan {
        Plan::PreFilter => prefilter_search(snap, q, k, predicate)?,
        Plan::PostFilter => postfilter_search(snap, q, k, nprobe, predicate)?,
    };
    Ok((hits, choice))
}
