//! Distance metrics, blocked distance computation and bounded top-K heaps.
//!
//! Every distance is accumulated sequentially over dimensions, one scalar
//! accumulator per (query, vector) pair. The blocked kernels vectorise across
//! vectors instead of across dimensions, so a blocked result is bit-identical
//! to the scalar one. Search paths that differ only in how they batch work
//! (single query, multi-query, worker count) therefore rank identically.

mod distance;
mod heap;

pub use distance::{batched_distances, distance, normalize, norm_squared, DistanceBlock};
pub(crate) use distance::{BlockKernel, BlockScratch, BLOCK_ROWS};
pub use heap::{merge_heaps, Neighbor, TopKHeap};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Distance metric, fixed per database at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Sum of squared differences. Reported without the square root.
    #[serde(rename = "l2", alias = "squaredl2")]
    SquaredL2,
    /// `1 - a.b / (|a| |b|)`.
    Cosine,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::SquaredL2 => 0,
            Metric::Cosine => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::SquaredL2),
            1 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::SquaredL2 => f.write_str("l2"),
            Metric::Cosine => f.write_str("cosine"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "squared_l2" | "squaredl2" | "euclidean" => Ok(Metric::SquaredL2),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown metric `{other}` (expected l2 or cosine)"
            ))),
        }
    }
}
