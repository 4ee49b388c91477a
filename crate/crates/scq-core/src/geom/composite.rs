//! Composite keys: an attribute value paired with a tuple ordinal.
//!
//! Sorting and partitioning on `(value, id)` keeps equal values from
//! straddling block boundaries ambiguously, and lets an index address one
//! specific tuple with a degenerate interval. A plain value interval
//! `[l, r]` maps to the composite interval `[(l, -inf), (r, +inf)]`.

use serde::{Deserialize, Serialize};

use crate::rect::Interval;

pub const ID_LO: i64 = i64::MIN;
pub const ID_HI: i64 = i64::MAX;

/// A `(value, id)` composite key with a total order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CKey {
    pub v: f64,
    pub id: i64,
}

impl CKey {
    pub fn new(v: f64, id: i64) -> CKey {
        CKey { v, id }
    }

    /// Key of a concrete tuple coordinate.
    pub fn of(v: f64, id: u32) -> CKey {
        CKey { v, id: id as i64 }
    }
}

impl Eq for CKey {}

impl Ord for CKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.v.total_cmp(&other.v).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for CKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A closed interval in composite-key space; empty when `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CInterval {
    pub lo: CKey,
    pub hi: CKey,
}

impl CInterval {
    pub fn new(lo: CKey, hi: CKey) -> CInterval {
        CInterval { lo, hi }
    }

    /// The composite interval of all tuples whose value lies in `iv`.
    pub fn from_interval(iv: Interval) -> CInterval {
        CInterval {
            lo: CKey::new(iv.lo, ID_LO),
            hi: CKey::new(iv.hi, ID_HI),
        }
    }

    /// All tuples with exactly this value.
    pub fn at_value(v: f64) -> CInterval {
        CInterval {
            lo: CKey::new(v, ID_LO),
            hi: CKey::new(v, ID_HI),
        }
    }

    /// Exactly one tuple coordinate.
    pub fn at_key(k: CKey) -> CInterval {
        CInterval { lo: k, hi: k }
    }

    pub fn full() -> CInterval {
        CInterval {
            lo: CKey::new(f64::NEG_INFINITY, ID_LO),
            hi: CKey::new(f64::INFINITY, ID_HI),
        }
    }

    /// A canonically empty interval.
    pub fn empty() -> CInterval {
        CInterval {
            lo: CKey::new(f64::INFINITY, ID_HI),
            hi: CKey::new(f64::NEG_INFINITY, ID_LO),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, k: CKey) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn contains_interval(&self, other: &CInterval) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    pub fn intersects(&self, other: &CInterval) -> bool {
        !self.is_empty() && !other.is_empty() && self.lo <= other.hi && other.lo <= self.hi
    }
}

/// A rectangle in composite-key space, one interval per dimension.
pub type CRect = Vec<CInterval>;

/// Lifts a per-dimension value rectangle into composite space.
pub fn crect_from_intervals(ivs: &[Interval]) -> CRect {
    ivs.iter().map(|iv| CInterval::from_interval(*iv)).collect()
}
