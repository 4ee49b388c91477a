//! Query rectangles and points over a query's output attributes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::QuerySpec;
use crate::relation::AttributeId;

/// A closed interval `[lo, hi]`; endpoints may be `-inf` / `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Interval> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::DimensionMismatch(format!("bad interval [{lo}, {hi}]")));
        }
        // -0.0 endpoints are normalized so composite-key comparisons agree
        // with value comparisons
        Ok(Interval {
            lo: crate::relation::norm(lo),
            hi: crate::relation::norm(hi),
        })
    }

    pub fn full() -> Interval {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn point(v: f64) -> Interval {
        let v = crate::relation::norm(v);
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// A hyper-rectangle keyed by attribute: one closed interval per output
/// attribute of the query it targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    entries: Vec<(AttributeId, Interval)>,
}

impl Rect {
    pub fn new(entries: Vec<(AttributeId, Interval)>) -> Result<Rect> {
        let mut seen = std::collections::HashSet::new();
        for (a, _) in &entries {
            if !seen.insert(a.clone()) {
                return Err(Error::DimensionMismatch(format!("duplicate attribute {a}")));
            }
        }
        Ok(Rect { entries })
    }

    /// Rectangle spanning the full space on the given attributes.
    pub fn full(attrs: &[AttributeId]) -> Rect {
        Rect {
            entries: attrs.iter().map(|a| (a.clone(), Interval::full())).collect(),
        }
    }

    pub fn attrs(&self) -> impl Iterator<Item = &AttributeId> {
        self.entries.iter().map(|(a, _)| a)
    }

    pub fn entries(&self) -> &[(AttributeId, Interval)] {
        &self.entries
    }

    pub fn interval(&self, attr: &AttributeId) -> Option<Interval> {
        self.entries.iter().find(|(a, _)| a == attr).map(|(_, i)| *i)
    }

    /// Interval for `attr`, or the full line when the rectangle does not
    /// constrain it.
    pub fn interval_or_full(&self, attr: &AttributeId) -> Interval {
        self.interval(attr).unwrap_or_else(Interval::full)
    }

    /// Checks that the rectangle covers exactly the query's output attributes.
    pub fn validate_for(&self, q: &QuerySpec) -> Result<()> {
        let out = q.output();
        if self.entries.len() != out.len() || out.iter().any(|a| self.interval(a).is_none()) {
            return Err(Error::DimensionMismatch(format!(
                "rectangle attrs {:?} vs output attrs {:?}",
                self.entries.iter().map(|(a, _)| a.as_str()).collect::<Vec<_>>(),
                out.iter().map(|a| a.as_str()).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    pub fn contains_point(&self, attrs: &[AttributeId], coords: &[f64]) -> bool {
        attrs
            .iter()
            .zip(coords)
            .all(|(a, v)| self.interval_or_full(a).contains(*v))
    }
}

/// A real-valued query point keyed by output attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPoint {
    entries: Vec<(AttributeId, f64)>,
}

impl QueryPoint {
    pub fn new(entries: Vec<(AttributeId, f64)>) -> Result<QueryPoint> {
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite query point".into()));
        }
        Ok(QueryPoint {
            entries: entries
                .into_iter()
                .map(|(a, v)| (a, crate::relation::norm(v)))
                .collect(),
        })
    }

    pub fn coord(&self, attr: &AttributeId) -> Option<f64> {
        self.entries.iter().find(|(a, _)| a == attr).map(|(_, v)| *v)
    }

    pub fn validate_for(&self, q: &QuerySpec) -> Result<()> {
        let out = q.output();
        if self.entries.len() != out.len() || out.iter().any(|a| self.coord(a).is_none()) {
            return Err(Error::DimensionMismatch("point attrs differ from output attrs".into()));
        }
        Ok(())
    }

    /// Coordinates in the query's output order.
    pub fn coords_for(&self, q: &QuerySpec) -> Vec<f64> {
        q.output().iter().map(|a| self.coord(a).unwrap()).collect()
    }
}

/// Euclidean distance between two coordinate vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Extends a rectangle over the output attributes to one over all attributes
/// of the query, unconstrained (`(-inf, inf)`) on the non-output attributes.
/// The count of results in `r` under the original query equals the count in
/// the extended rectangle under the full query.
pub fn extend_rect(q: &QuerySpec, r: &Rect) -> Result<Rect> {
    r.validate_for(q)?;
    let entries = q
        .all_attrs()
        .iter()
        .map(|a| (a.clone(), r.interval_or_full(a)))
        .collect();
    Ok(Rect { entries })
}
