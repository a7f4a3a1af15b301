use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One ranked search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor<S> {
    pub asset_id: Arc<str>,
    pub vector_id: u64,
    pub distance: S,
}

fn cmp_distance<S: Scalar>(a: S, b: S) -> Ordering {
    a.partial_cmp(&b)
        .unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}

/// Total order on hits: ascending distance, then ascending vector id.
pub(crate) fn rank_order<S: Scalar>(a: (S, u64), b: (S, u64)) -> Ordering {
    cmp_distance(a.0, b.0).then(a.1.cmp(&b.1))
}

struct Entry<S>(Neighbor<S>);

impl<S: Scalar> PartialEq for Entry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Entry<S> {}

impl<S: Scalar> PartialOrd for Entry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Entry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(
            (self.0.distance, self.0.vector_id),
            (other.0.distance, other.0.vector_id),
        )
    }
}

/// Bounded max-heap holding the `k` best hits offered so far.
pub struct TopKHeap<S> {
    k: usize,
    heap: BinaryHeap<Entry<S>>,
}

impl<S: Scalar> TopKHeap<S> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(4096) + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Current worst retained hit, if the heap is full.
    pub fn threshold(&self) -> Option<(S, u64)> {
        if self.heap.len() < self.k {
            return None;
        }
        self.heap.peek().map(|e| (e.0.distance, e.0.vector_id))
    }

    /// Whether a hit with this key would be retained.
    #[inline]
    pub fn accepts(&self, distance: S, vector_id: u64) -> bool {
        if self.k == 0 {
            return false;
        }
        match self.threshold() {
            None => true,
            Some(worst) => rank_order((distance, vector_id), worst) == Ordering::Less,
        }
    }

    /// Offers a hit; returns true when it was retained.
    pub fn offer(&mut self, hit: Neighbor<S>) -> bool {
        if !self.accepts(hit.distance, hit.vector_id) {
            return false;
        }
        if self.heap.len() == self.k {
            self.heap.pop();
        }
        self.heap.push(Entry(hit));
        true
    }

    pub fn into_sorted_vec(self) -> Vec<Neighbor<S>> {
        self.heap.into_sorted_vec().into_iter().map(|e| e.0).collect()
    }

    pub(crate) fn drain_unsorted(self) -> impl Iterator<Item = Neighbor<S>> {
        self.heap.into_vec().into_iter().map(|e| e.0)
    }
}

/// Global `k` best across heaps, ascending by distance then vector id.
pub fn merge_heaps<S: Scalar>(heaps: impl IntoIterator<Item = TopKHeap<S>>, k: usize) -> Vec<Neighbor<S>> {
    let mut all = TopKHeap::new(k);
    for h in heaps {
        for hit in h.drain_unsorted() {
            all.offer(hit);
        }
    }
    all.into_sorted_vec()
}
