//! Deterministic space accounting.
//!
//! Memory is measured as stored entries (tree nodes, map entries,
//! precomputed counters, materialized tuples), not resident set size, so
//! space comparisons are hardware independent and reproducible.

use crate::baseline::{RangeSIndex, RangeTIndex};
use crate::heavy_light::{CoveredOutputIndex, HeavyLightIndex};
use crate::hier::HierIndex;
use crate::path::PathIndex;
use crate::star::StarIndex;

/// Deterministic, platform-independent count of stored entries.
pub trait StoredEntries {
    fn stored_entries(&self) -> u64;
}

macro_rules! impl_stored {
    ($($t:ty),*) => {
        $(impl StoredEntries for $t {
            fn stored_entries(&self) -> u64 {
                <$t>::stored_entries(self)
            }
        })*
    };
}

impl_stored!(StarIndex, PathIndex, HeavyLightIndex, CoveredOutputIndex, HierIndex, RangeSIndex, RangeTIndex);
