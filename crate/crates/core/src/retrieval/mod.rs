//! Per-category item indexes and multi-context retrieval.
//!
//! Each category gets its own index over unit-norm item vectors. A request
//! selects interests from the user's engagement scores, encodes the user once
//! per interest with that category's hard-searched subsequence, queries the
//! matching index and merges the lists.

mod index;
mod merge;
mod multi;
mod snapshot;

pub use index::{rank_order, Backend, CategoryIndex, GraphParams, ScoredItem};
pub use merge::{merge, MergeStrategy, MergedItem};
pub use multi::{
    build_global_index, build_indexes, global_retrieve, multi_retrieve, multi_retrieve_with, request_rng, CategoryResult, IndexSet,
    RetrievalConfig, RetrievalResult,
};
pub use snapshot::{load_indexes, read_index, read_indexes, save_indexes, write_index, write_indexes};
