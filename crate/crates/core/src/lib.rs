//! Embedded, disk-resident IVF vector store with hybrid attribute filtering,
//! batched multi-query search and incremental index maintenance.

mod error;
mod scalar;

pub mod batch;
pub mod clustering;
pub mod hybrid;
pub mod kernel;
pub mod maintenance;
pub mod search;
pub mod storage;
pub mod synthetic;
pub mod vecfile;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use kernel::Metric;
pub use search::{Nprobe, ResultSet, SearchRequest};
pub use storage::{Database, DbConfig, Snapshot};

/// One search hit at storage precision.
pub type Hit = kernel::Neighbor<f32>;
/// Balanced k-means state at storage precision.
pub type KMeans = clustering::ClusteringState<f32>;
/// Top-K accumulator at storage precision.
pub type TopK = kernel::TopKHeap<f32>;
