//! Attribute-filtered search: predicates, statistics, the two executors and
//! the plan chooser.

mod exec;
mod predicate;
mod stats;

pub use exec::{
    choose_plan, estimate_selectivity, hybrid_search, ivf_selectivity, plan, postfilter_search, postfilter_traced,
    prefilter_search, prefilter_traced, HybridMode, Plan, PlanChoice, SEQUENTIAL_ABOVE,
};
pub use predicate::{Atom, CmpOp, Literal, Predicate};
pub use stats::{Bucket, ColumnStat, ColumnStats, FrequencyTable, Histogram, HISTOGRAM_BUCKETS, TOP_VALUES};
