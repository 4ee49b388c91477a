//! Brute-force oracles over small instances: full bag-semantics enumeration
//! by nested-loop join, range counting, and exact nearest neighbor.
//!
//! These are the reference implementations the indexes are validated
//! against. They stay deliberately naive; the only concession is an upfront
//! work estimate so a mis-sized call fails loudly instead of hanging.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::query::{bind, QuerySpec};
use crate::rect::{euclidean, QueryPoint, Rect};
use crate::relation::{AttributeId, DatabaseInstance, Relation};

/// Default cap on estimated elementary steps (product of relation sizes).
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Enumerates the query result multiset in the query's output order via
/// nested-loop join. Fails with `BudgetExceeded` when the estimated work
/// (product of atom cardinalities) exceeds `budget`.
pub fn brute_force_results(q: &QuerySpec, db: &DatabaseInstance, budget: u64) -> Result<Vec<Vec<f64>>> {
    let atoms = bind(db, q)?;
    let mut estimated: u64 = 1;
    for r in &atoms {
        estimated = estimated.saturating_mul(r.len().max(1) as u64);
    }
    if estimated > budget {
        return Err(Error::BudgetExceeded {
            estimated,
            cap: budget,
        });
    }
    // positions of each attribute per atom, and of the output attributes
    let mut attr_slots: HashMap<&AttributeId, usize> = HashMap::new();
    for a in q.all_attrs() {
        let next = attr_slots.len();
        attr_slots.insert(a, next);
    }
    let slot_of = |rel: &Relation, i: usize| attr_slots[&rel.attrs[i]];
    let out_slots: Vec<usize> = q.output().iter().map(|a| attr_slots[a]).collect();

    let mut results = Vec::new();
    let mut assignment: Vec<Option<f64>> = vec![None; attr_slots.len()];

    fn descend(
        atoms: &[Relation],
        depth: usize,
        assignment: &mut Vec<Option<f64>>,
        slot_of: &dyn Fn(&Relation, usize) -> usize,
        out_slots: &[usize],
        results: &mut Vec<Vec<f64>>,
    ) {
        if depth == atoms.len() {
            results.push(out_slots.iter().map(|&s| assignment[s].unwrap()).collect());
            return;
        }
        let rel = &atoms[depth];
        'tuples: for t in &rel.tuples {
            let mut bound_here = Vec::new();
            for (i, &v) in t.values.iter().enumerate() {
                let s = slot_of(rel, i);
                match assignment[s] {
                    Some(existing) => {
                        if existing != v {
                            for &b in &bound_here {
                                assignment[b] = None;
                            }
                            continue 'tuples;
                        }
                    }
                    None => {
                        assignment[s] = Some(v);
                        bound_here.push(s);
                    }
                }
            }
            descend(atoms, depth + 1, assignment, slot_of, out_slots, results);
            for &b in &bound_here {
                assignment[b] = None;
            }
        }
    }

    descend(&atoms, 0, &mut assignment, &slot_of, &out_slots, &mut results);
    Ok(results)
}

/// `|Q(I) ∩ r|` as a multiset count.
pub fn brute_force_rcq(q: &QuerySpec, db: &DatabaseInstance, r: &Rect, budget: u64) -> Result<u64> {
    r.validate_for(q)?;
    let results = brute_force_results(q, db, budget)?;
    Ok(count_in_rect(q, &results, r))
}

/// Counts the members of a precomputed result multiset inside `r`.
pub fn count_in_rect(q: &QuerySpec, results: &[Vec<f64>], r: &Rect) -> u64 {
    let intervals: Vec<_> = q.output().iter().map(|a| r.interval_or_full(a)).collect();
    results
        .iter()
        .filter(|t| t.iter().zip(&intervals).all(|(v, iv)| iv.contains(*v)))
        .count() as u64
}

/// Exact nearest-neighbor distance from `point` to a result multiset.
pub fn exact_nn_distance(q: &QuerySpec, results: &[Vec<f64>], point: &QueryPoint) -> Option<f64> {
    let coords = point.coords_for(q);
    results
        .iter()
        .map(|t| euclidean(t, &coords))
        .min_by(|a, b| a.total_cmp(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rect::Interval;
    use crate::relation::Relation;

    pub fn db_a() -> DatabaseInstance {
        let r1 = Relation::new(
            "R1",
            vec!["A1".into(), "B".into()],
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 6.0]],
        )
        .unwrap();
        let r2 = Relation::new(
            "R2",
            vec!["A2".into(), "B".into()],
            vec![vec![10.0, 5.0], vec![11.0, 6.0]],
        )
        .unwrap();
        DatabaseInstance::new(vec![r1, r2]).unwrap()
    }

    pub fn db_p() -> DatabaseInstance {
        let r1 = Relation::new("R1", vec!["A1".into(), "B1".into()], vec![vec![1.0, 2.0]]).unwrap();
        let r2 = Relation::new(
            "R2",
            vec!["B1".into(), "B2".into()],
            vec![vec![2.0, 3.0], vec![2.0, 4.0]],
        )
        .unwrap();
        let r3 = Relation::new(
            "R3",
            vec!["B2".into(), "A2".into()],
            vec![vec![3.0, 9.0], vec![4.0, 9.0]],
        )
        .unwrap();
        DatabaseInstance::new(vec![r1, r2, r3]).unwrap()
    }

    fn star2() -> QuerySpec {
        QuerySpec::parse_text("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,A2\n").unwrap()
    }

    fn path3() -> QuerySpec {
        QuerySpec::parse_text("R1(A1,B1)\nR2(B1,B2)\nR3(B2,A2)\nOUTPUT: A1,A2\n").unwrap()
    }

    #[test]
    fn star_results_on_db_a() {
        let mut res = brute_force_results(&star2(), &db_a(), DEFAULT_BUDGET).unwrap();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            res,
            vec![vec![1.0, 10.0], vec![2.0, 10.0], vec![3.0, 11.0]]
        );
    }

    #[test]
    fn path_results_keep_duplicates() {
        let res = brute_force_results(&path3(), &db_p(), DEFAULT_BUDGET).unwrap();
        assert_eq!(res, vec![vec![1.0, 9.0], vec![1.0, 9.0]]);
    }

    #[test]
    fn rcq_counts() {
        let q = star2();
        let db = db_a();
        let r = Rect::new(vec![
            ("A1".into(), Interval::new(1.0, 2.0).unwrap()),
            ("A2".into(), Interval::new(10.0, 10.0).unwrap()),
        ])
        .unwrap();
        assert_eq!(brute_force_rcq(&q, &db, &r, DEFAULT_BUDGET).unwrap(), 2);
        let empty = Rect::new(vec![
            ("A1".into(), Interval::new(4.0, 9.0).unwrap()),
            ("A2".into(), Interval::full()),
        ])
        .unwrap();
        assert_eq!(brute_force_rcq(&q, &db, &empty, DEFAULT_BUDGET).unwrap(), 0);
    }

    #[test]
    fn path_rcq_bag_semantics() {
        let r = Rect::new(vec![
            ("A1".into(), Interval::new(1.0, 1.0).unwrap()),
            ("A2".into(), Interval::new(9.0, 9.0).unwrap()),
        ])
        .unwrap();
        assert_eq!(brute_force_rcq(&path3(), &db_p(), &r, DEFAULT_BUDGET).unwrap(), 2);
    }

    #[test]
    fn empty_relation_yields_empty() {
        let r1 = Relation::new("R1", vec!["A1".into(), "B".into()], vec![]).unwrap();
        let r2 = Relation::new("R2", vec!["A2".into(), "B".into()], vec![vec![1.0, 2.0]]).unwrap();
        let db = DatabaseInstance::new(vec![r1, r2]).unwrap();
        assert!(brute_force_results(&star2(), &db, DEFAULT_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn budget_enforced() {
        let db = db_a();
        match brute_force_results(&star2(), &db, 2) {
            Err(Error::BudgetExceeded { estimated: 6, cap: 2 }) => {}
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
    }
}
