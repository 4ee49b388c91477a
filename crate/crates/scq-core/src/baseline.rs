//! Reference baselines for benchmarking: per-value sorted lists with binary
//! search, and full materialization into a range tree.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::composite::{CInterval, CRect};
use crate::geom::range_tree::RangeTree;
use crate::joins::bind_reduced;
use crate::oracle::brute_force_results;
use crate::query::{QueryClass, QuerySpec};
use crate::rect::{Interval, Rect};
use crate::relation::{DatabaseInstance, GroupKey, ValueKey};
use crate::star::StarLayout;

/// Per join value, one sorted list of head values per relation; a count
/// query runs two binary searches per list and sums the products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeSIndex {
    query: QuerySpec,
    lists: BTreeMap<GroupKey, Vec<Vec<f64>>>,
    k: usize,
    head_attrs: Vec<crate::relation::AttributeId>,
}

impl RangeSIndex {
    /// Requires a star-shaped query with single-attribute heads (the sorted
    /// lists are one-dimensional).
    pub fn build(db: &DatabaseInstance, q: &QuerySpec) -> Result<RangeSIndex> {
        let k = match q.classify() {
            QueryClass::Star(k) => k,
            other => {
                return Err(Error::WrongClass {
                    expected: "k-star with single-attribute heads".into(),
                    found: other.to_string(),
                })
            }
        };
        let atoms = bind_reduced(db, q)?;
        let layout = StarLayout::from_query(q, &atoms);
        if layout.head_groups.iter().any(|g| g.len() != 1) {
            return Err(Error::WrongClass {
                expected: "k-star with single-attribute heads".into(),
                found: "multi-attribute heads".into(),
            });
        }
        let head_attrs = layout.head_groups.iter().map(|g| g[0].clone()).collect();
        let mut lists: BTreeMap<GroupKey, Vec<Vec<f64>>> = BTreeMap::new();
        for (i, rel) in atoms.iter().enumerate() {
            let head_pos = layout.head_positions[i][0];
            for t in &rel.tuples {
                let slot = lists
                    .entry(layout.b_key(i, rel, t.id))
                    .or_insert_with(|| vec![Vec::new(); k]);
                slot[i].push(t.values[head_pos]);
            }
        }
        for per_rel in lists.values_mut() {
            for l in per_rel {
                l.sort_by(|a, b| a.total_cmp(b));
            }
        }
        Ok(RangeSIndex {
            query: q.clone(),
            lists,
            k,
            head_attrs,
        })
    }

    pub fn count(&self, r: &Rect) -> Result<u64> {
        Ok(self.count_instrumented(r)?.0)
    }

    /// Count plus the number of list comparisons made by the binary
    /// searches.
    pub fn count_instrumented(&self, r: &Rect) -> Result<(u64, u64)> {
        r.validate_for(&self.query)?;
        let ivs: Vec<Interval> = self
            .head_attrs
            .iter()
            .map(|a| r.interval_or_full(a))
            .collect();
        let mut total = 0u64;
        let mut comparisons = 0u64;
        for per_rel in self.lists.values() {
            let mut prod = 1u64;
            for (list, iv) in per_rel.iter().zip(&ivs) {
                let lo = lower_bound(list, iv.lo, &mut comparisons);
                let hi = upper_bound(list, iv.hi, &mut comparisons);
                prod *= (hi - lo) as u64;
                if prod == 0 {
                    break;
                }
            }
            total += prod;
        }
        Ok((total, comparisons))
    }

    pub fn num_values(&self) -> usize {
        self.lists.len()
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    pub fn stored_entries(&self) -> u64 {
        self.lists
            .values()
            .map(|per_rel| per_rel.iter().map(|l| l.len() as u64).sum::<u64>() + self.k as u64)
            .sum()
    }
}

fn lower_bound(list: &[f64], x: f64, comparisons: &mut u64) -> usize {
    let (mut lo, mut hi) = (0usize, list.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        *comparisons += 1;
        if list[mid] < x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

fn upper_bound(list: &[f64], x: f64, comparisons: &mut u64) -> usize {
    let (mut lo, mut hi) = (0usize, list.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        *comparisons += 1;
        if list[mid] <= x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Full materialization baseline: every query result is enumerated, the
/// output projection is stored (with multiplicity weights) in a range tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeTIndex {
    query: QuerySpec,
    tree: RangeTree,
}

impl RangeTIndex {
    pub fn build(db: &DatabaseInstance, q: &QuerySpec, budget: u64) -> Result<RangeTIndex> {
        let results = brute_force_results(q, db, budget)?;
        let mut weights: std::collections::HashMap<Vec<ValueKey>, u64> =
            std::collections::HashMap::new();
        for t in &results {
            *weights
                .entry(t.iter().map(|v| ValueKey::of(*v)).collect())
                .or_insert(0) += 1;
        }
        let mut entries: Vec<(Vec<ValueKey>, u64)> = weights.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let rows = entries
            .into_iter()
            .map(|(ks, w)| (ks.iter().map(|k| k.value()).collect::<Vec<f64>>(), w))
            .collect();
        Ok(RangeTIndex {
            query: q.clone(),
            tree: RangeTree::from_values(q.output().len(), rows),
        })
    }

    pub fn count(&self, r: &Rect) -> Result<u64> {
        r.validate_for(&self.query)?;
        let crect: CRect = self
            .query
            .output()
            .iter()
            .map(|a| CInterval::from_interval(r.interval_or_full(a)))
            .collect();
        Ok(self.tree.count(&crect))
    }

    /// Total stored weight; equals the result bag size.
    pub fn total_weight(&self) -> u64 {
        self.tree.total_weight()
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    /// Tree nodes plus the materialized result multiset (weights count as
    /// materialized tuples), so the metric never understates what the
    /// baseline enumerated.
    pub fn stored_entries(&self) -> u64 {
        self.tree.stored_entries() + self.tree.total_weight()
    }
}
