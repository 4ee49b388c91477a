//! Geometric primitives: weighted range counting and sampling, block
//! partitions with canonical decomposition, and approximate nearest
//! neighbor search.

pub mod ann;
pub mod blocks;
pub mod composite;
pub mod range_tree;

pub use ann::AnnTree;
pub use blocks::{BlockTree, HeadCanonical, HeadIndex, MultiBlockTree};
pub use composite::{crect_from_intervals, CInterval, CKey, CRect};
pub use range_tree::{RangeTree, RtPoint, RtSampler};
