//! Balanced multi-way KD-tree (BMKD-tree) with learned split pivots.
//!
//! The index partitions each level of the tree into `t` sub-spaces at `t - 1`
//! quantile pivots. Instead of sorting to find exact quantiles, pivots are
//! predicted by a two-stage regression model of the per-dimension CDF, then
//! refined from a small candidate window. The tree supports bulk in-place
//! insertion with selective sub-tree rebuilding, exact kNN and radius search
//! under four traversal/volume strategies, and a learned per-query strategy
//! selector.
//!
//! Module layout:
//! - [`geometry`]: points, bounding volumes, distance kernels, pruning tests
//! - [`quantile`]: the two-stage CDF model and its incremental update
//! - [`partition`]: the path-length objective and partition-number selection
//! - [`tree`]: construction, bulk insertion, balance audit, rebuilding
//! - [`search`]: exact kNN and radius search strategies
//! - [`selector`]: meta-features, ground truth, forest training, ranking
//! - [`snapshot`]: versioned binary serialization of a built tree

pub mod geometry;
pub mod partition;
pub mod quantile;
pub mod search;
pub mod selector;
pub mod snapshot;
pub mod tree;

use thiserror::Error;

/// Errors surfaced by index construction, model training, and serialization.
#[derive(Debug, Error)]
pub enum UnisError {
    /// Caller violated an operation precondition.
    #[error("usage: {0}")]
    Usage(String),
    /// Input data is malformed or out of the supported domain.
    #[error("data: {0}")]
    Data(String),
    /// A leaf-path snapshot no longer matches the tree it was taken from.
    #[error("leaf snapshot is stale: the tree was modified after the snapshot was taken")]
    SnapshotStale,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UnisError>;

/// Splits one seed into independent per-use sub-seeds.
///
/// SplitMix64 finalizer; the (seed, stream) pair maps to a well-distributed
/// 64-bit value so sequential stream ids never produce correlated RNGs.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
