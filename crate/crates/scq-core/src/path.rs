//! Inductive range-count index for k-path queries.
//!
//! The endpoint relations are sorted and blocked like the star index; pair
//! counts are precomputed for every combination of the two block-tree
//! nodes. Partially intersected endpoint blocks are resolved tuple by tuple
//! against sub-indexes on the (k-1)-path prefix and suffix queries; the
//! base case k=2 is a star index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::blocks::HeadIndex;
use crate::geom::composite::{CInterval, CKey, CRect};
use crate::joins::bind_reduced;
use crate::query::{QueryClass, QuerySpec};
use crate::rect::Rect;
use crate::relation::{AttributeId, DatabaseInstance, GroupKey, Relation};
use crate::star::{ComboCounts, StarIndex, StarLayout};

/// Per-query counters for the path index.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathStats {
    /// Sub-index queries issued at the top recursion level.
    pub sub_invocations: u64,
    /// Endpoint tuples enumerated at the top recursion level.
    pub partial_tuples: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum SubIndex {
    Star(StarIndex),
    Path(Box<PathNode>),
}

impl SubIndex {
    fn count(&self, g1: &CRect, g2: &CRect) -> u64 {
        match self {
            SubIndex::Star(s) => s.rcq_crects(&[g1.clone(), g2.clone()]),
            SubIndex::Path(p) => p.count(g1, g2, &mut PathStats::default()),
        }
    }

    fn stored_entries(&self) -> u64 {
        match self {
            SubIndex::Star(s) => s.stored_entries(),
            SubIndex::Path(p) => p.stored_entries(),
        }
    }
}

/// One level of the inductive construction over a chain of relations.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathNode {
    /// First endpoint relation and its head group positions.
    first: Relation,
    last: Relation,
    g1_positions: Vec<usize>,
    g2_positions: Vec<usize>,
    /// Join-group positions adjacent to the endpoints.
    b1_positions: Vec<usize>,
    b_last_positions: Vec<usize>,
    head1: HeadIndex,
    head2: HeadIndex,
    pair_counts: ComboCounts,
    node_maps_entries: u64,
    /// Prefix index over relations `1..k-1`, head `(g1, b_last)`.
    d1: SubIndex,
    /// Suffix index over relations `2..k`, head `(b1, g2)`.
    d2: SubIndex,
}

/// The space-time tunable path index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathIndex {
    query: QuerySpec,
    k: usize,
    alpha: u64,
    groups: [Vec<AttributeId>; 2],
    inner: SubIndex,
}

impl PathIndex {
    /// Builds the index with time budget `T`; the block size is
    /// `alpha = ceil(T^(1/(k-1)))` and is shared by every recursion level.
    pub fn build(db: &DatabaseInstance, q: &QuerySpec, t_budget: u64) -> Result<PathIndex> {
        let k = match q.classify() {
            QueryClass::Path(k) => k,
            QueryClass::Star(2) => 2,
            other => {
                return Err(Error::WrongClass {
                    expected: "k-path".into(),
                    found: other.to_string(),
                })
            }
        };
        let n = db.n();
        if t_budget == 0 || (n > 0 && t_budget > n) {
            return Err(Error::BadBudget(t_budget));
        }
        let alpha = nth_root_ceil(t_budget, (k - 1) as u32);
        let order = q.path_order().expect("classified path has a chain order");
        let atoms_unordered = bind_reduced(db, q)?;
        let atoms: Vec<Relation> = order.iter().map(|&i| atoms_unordered[i].clone()).collect();
        let join: Vec<AttributeId> = q.join_attrs();
        let g1: Vec<AttributeId> = atoms[0]
            .attrs
            .iter()
            .filter(|a| !join.contains(a))
            .cloned()
            .collect();
        let g2: Vec<AttributeId> = atoms[k - 1]
            .attrs
            .iter()
            .filter(|a| !join.contains(a))
            .cloned()
            .collect();
        let inner = build_sub(&atoms, &g1, &g2, alpha);
        Ok(PathIndex {
            query: q.clone(),
            k,
            alpha,
            groups: [g1, g2],
            inner,
        })
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    /// Exact bag count of query results inside `r`.
    pub fn rcq(&self, r: &Rect) -> Result<u64> {
        Ok(self.rcq_with_stats(r)?.0)
    }

    pub fn rcq_with_stats(&self, r: &Rect) -> Result<(u64, PathStats)> {
        r.validate_for(&self.query)?;
        let mk = |group: &[AttributeId]| -> CRect {
            group
                .iter()
                .map(|a| CInterval::from_interval(r.interval_or_full(a)))
                .collect()
        };
        let g1 = mk(&self.groups[0]);
        let g2 = mk(&self.groups[1]);
        let mut stats = PathStats::default();
        let count = match &self.inner {
            SubIndex::Star(s) => s.rcq_crects(&[g1, g2]),
            SubIndex::Path(p) => p.count(&g1, &g2, &mut stats),
        };
        Ok((count, stats))
    }

    pub fn stored_entries(&self) -> u64 {
        self.inner.stored_entries()
    }

    /// Number of recursive sub-indexes below this one (the base star counts
    /// as a leaf).
    pub fn recursion_shape(&self) -> (usize, usize) {
        fn walk(s: &SubIndex, depth: usize, max_depth: &mut usize, subs: &mut usize) {
            match s {
                SubIndex::Star(_) => *max_depth = (*max_depth).max(depth),
                SubIndex::Path(p) => {
                    *subs += 2;
                    walk(&p.d1, depth + 1, max_depth, subs);
                    walk(&p.d2, depth + 1, max_depth, subs);
                }
            }
        }
        let mut max_depth = 0;
        let mut subs = 0;
        walk(&self.inner, 0, &mut max_depth, &mut subs);
        (max_depth, subs)
    }
}

/// Smallest integer `a` with `a^e >= t`.
fn nth_root_ceil(t: u64, e: u32) -> u64 {
    if e <= 1 {
        return t.max(1);
    }
    let mut a = 1u64;
    while a.saturating_pow(e) < t {
        a += 1;
    }
    a
}

fn build_sub(atoms: &[Relation], g1: &[AttributeId], g2: &[AttributeId], alpha: u64) -> SubIndex {
    let k = atoms.len();
    if k == 2 {
        let layout = StarLayout::from_heads(atoms, vec![g1.to_vec(), g2.to_vec()]);
        return SubIndex::Star(StarIndex::from_atoms(layout, atoms.to_vec(), alpha));
    }
    let shared = |a: &Relation, b: &Relation| -> Vec<AttributeId> {
        a.attrs.iter().filter(|x| b.position(x).is_some()).cloned().collect()
    };
    let b1 = shared(&atoms[0], &atoms[1]);
    let b_last = shared(&atoms[k - 2], &atoms[k - 1]);
    let positions = |rel: &Relation, attrs: &[AttributeId]| -> Vec<usize> {
        attrs.iter().map(|a| rel.position(a).unwrap()).collect()
    };
    let first = atoms[0].clone();
    let last = atoms[k - 1].clone();
    let g1_positions = positions(&first, g1);
    let g2_positions = positions(&last, g2);
    let b1_positions = positions(&first, &b1);
    let b_last_positions = positions(&last, &b_last);

    let coords = |rel: &Relation, pos: &[usize]| -> Vec<(u32, Vec<CKey>)> {
        rel.tuples
            .iter()
            .map(|t| (t.id, pos.iter().map(|&p| CKey::of(t.values[p], t.id)).collect()))
            .collect()
    };
    let head1 = HeadIndex::build(g1.len(), coords(&first, &g1_positions), alpha as usize);
    let head2 = HeadIndex::build(g2.len(), coords(&last, &g2_positions), alpha as usize);

    // per-node multiplicity maps over the endpoint join groups
    let maps1 = head1.combo_maps(&|tid| first.tuples[tid as usize].key(&b1_positions));
    let maps2 = head2.combo_maps(&|tid| last.tuples[tid as usize].key(&b_last_positions));
    let node_maps_entries =
        maps1.iter().map(|m| m.len() as u64).sum::<u64>() + maps2.iter().map(|m| m.len() as u64).sum::<u64>();

    // adjacency count maps of the middle relations, keyed by the join
    // group shared with the previous relation
    let mut adjacency = Vec::new();
    for mid in 1..k - 1 {
        let rel = &atoms[mid];
        let in_pos = positions(rel, &shared(&atoms[mid - 1], rel));
        let out_pos = positions(rel, &shared(rel, &atoms[mid + 1]));
        let mut counts: HashMap<(GroupKey, GroupKey), u64> = HashMap::new();
        for t in &rel.tuples {
            *counts.entry((t.key(&in_pos), t.key(&out_pos))).or_insert(0) += 1;
        }
        let mut by_in: HashMap<GroupKey, Vec<(GroupKey, u64)>> = HashMap::new();
        for ((ik, ok), c) in counts {
            by_in.entry(ik).or_default().push((ok, c));
        }
        adjacency.push(by_in);
    }

    // pair counts: propagate each node-1 vector through the chain, then
    // dot with every node-2 map
    let mut pair_counts = ComboCounts::zeros(vec![maps1.len() as u32, maps2.len() as u32]);
    for (u1, m1) in maps1.iter().enumerate() {
        let mut vec: BTreeMap<GroupKey, u64> = m1.clone();
        for by_in in &adjacency {
            let mut next: BTreeMap<GroupKey, u64> = BTreeMap::new();
            for (ik, c) in &vec {
                if let Some(outs) = by_in.get(ik) {
                    for (ok, m) in outs {
                        *next.entry(ok.clone()).or_insert(0) += c * m;
                    }
                }
            }
            vec = next;
            if vec.is_empty() {
                break;
            }
        }
        if vec.is_empty() {
            continue;
        }
        for (u2, m2) in maps2.iter().enumerate() {
            let (small, large) = if vec.len() <= m2.len() { (&vec, m2) } else { (m2, &vec) };
            let mut n = 0u64;
            for (key, c) in small {
                if let Some(d) = large.get(key) {
                    n += c * d;
                }
            }
            if n > 0 {
                pair_counts.add(&[u1 as u32, u2 as u32], n);
            }
        }
    }

    let d1 = build_sub(&atoms[..k - 1], g1, &b_last, alpha);
    let d2 = build_sub(&atoms[1..], &b1, g2, alpha);
    SubIndex::Path(Box::new(PathNode {
        first,
        last,
        g1_positions,
        g2_positions,
        b1_positions,
        b_last_positions,
        head1,
        head2,
        pair_counts,
        node_maps_entries,
        d1,
        d2,
    }))
}

impl PathNode {
    fn count(&self, g1: &CRect, g2: &CRect, stats: &mut PathStats) -> u64 {
        let can1 = self.head1.canonical(g1);
        let can2 = self.head2.canonical(g2);
        let mut total = 0u64;
        for &u1 in &can1.covered_ids {
            for &u2 in &can2.covered_ids {
                total += self.pair_counts.get(&[u1, u2]);
            }
        }
        // first-endpoint tuples in partial blocks: count suffix results
        // with the tuple's adjacent join value, unrestricted on the first
        // head group
        for &tid in &can1.partial_tuples {
            stats.partial_tuples += 1;
            let t = &self.first.tuples[tid as usize];
            let b_rect: CRect = self
                .b1_positions
                .iter()
                .map(|&p| CInterval::at_value(t.values[p]))
                .collect();
            stats.sub_invocations += 1;
            total += self.d2.count(&b_rect, g2);
        }
        // last-endpoint tuples in partial blocks: restrict the first head
        // group to the covered region so pairs of partial tuples are not
        // double counted
        for &tid in &can2.partial_tuples {
            stats.partial_tuples += 1;
            let t = &self.last.tuples[tid as usize];
            let b_rect: CRect = self
                .b_last_positions
                .iter()
                .map(|&p| CInterval::at_value(t.values[p]))
                .collect();
            for covered in &can1.covered_rects {
                stats.sub_invocations += 1;
                total += self.d1.count(covered, &b_rect);
            }
        }
        total
    }

    fn stored_entries(&self) -> u64 {
        self.head1.stored_entries()
            + self.head2.stored_entries()
            + self.pair_counts.len() as u64
            + self.node_maps_entries
            + self.d1.stored_entries()
            + self.d2.stored_entries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{brute_force_rcq, brute_force_results, DEFAULT_BUDGET};
    use crate::rect::Interval;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn path3() -> QuerySpec {
        QuerySpec::parse_text("R1(A1,B1)\nR2(B1,B2)\nR3(B2,A2)\nOUTPUT: A1,A2\n").unwrap()
    }

    fn db_p() -> DatabaseInstance {
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

    fn rect2(a: (f64, f64), b: (f64, f64)) -> Rect {
        Rect::new(vec![
            ("A1".into(), Interval::new(a.0, a.1).unwrap()),
            ("A2".into(), Interval::new(b.0, b.1).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn alpha_from_budget() {
        let idx = PathIndex::build(&db_p(), &path3(), 4).unwrap();
        assert_eq!(idx.alpha(), 2);
    }

    #[test]
    fn recursion_shape_three_path() {
        let idx = PathIndex::build(&db_p(), &path3(), 4).unwrap();
        // one recursive level with two star sub-indexes
        assert_eq!(idx.recursion_shape(), (1, 2));
    }

    #[test]
    fn root_pair_count_is_join_size() {
        let db = db_p();
        let idx = PathIndex::build(&db, &path3(), db.n()).unwrap();
        let full = rect2(
            (f64::NEG_INFINITY, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        );
        assert_eq!(idx.rcq(&full).unwrap(), 2);
    }

    #[test]
    fn bag_semantics_on_db_p() {
        for t in [1u64, 2, 4, 5] {
            let idx = PathIndex::build(&db_p(), &path3(), t).unwrap();
            assert_eq!(idx.rcq(&rect2((1.0, 1.0), (9.0, 9.0))).unwrap(), 2, "T={t}");
            assert_eq!(idx.rcq(&rect2((2.0, 5.0), (9.0, 9.0))).unwrap(), 0, "T={t}");
        }
    }

    fn random_path_db(
        rng: &mut SmallRng,
        k: usize,
        per_rel: usize,
        dom: u64,
    ) -> (QuerySpec, DatabaseInstance) {
        let mut text = String::new();
        let attr = |i: usize| -> (String, String) {
            let left = if i == 0 { "A1".to_owned() } else { format!("J{i}") };
            let right = if i == k - 1 { "A2".to_owned() } else { format!("J{}", i + 1) };
            (left, right)
        };
        for i in 0..k {
            let (l, r) = attr(i);
            text.push_str(&format!("R{}({l},{r})\n", i + 1));
        }
        text.push_str("OUTPUT: A1,A2\n");
        let q = QuerySpec::parse_text(&text).unwrap();
        let rels = (0..k)
            .map(|i| {
                let (l, r) = attr(i);
                let rows = (0..per_rel)
                    .map(|_| vec![rng.random_range(0..dom) as f64, rng.random_range(0..dom) as f64])
                    .collect();
                Relation::new(
                    format!("R{}", i + 1),
                    vec![l.as_str().into(), r.as_str().into()],
                    rows,
                )
                .unwrap()
            })
            .collect();
        (q, DatabaseInstance::new(rels).unwrap())
    }

    #[test]
    fn matches_oracle_k_2_3_4() {
        let mut rng = SmallRng::seed_from_u64(71);
        for k in [2usize, 3, 4] {
            let per_rel = 10 * k;
            let (q, db) = random_path_db(&mut rng, k, per_rel, 12);
            let n = db.n();
            let budgets = [1u64, 2u64.pow((k - 1) as u32), n];
            for t in budgets {
                let idx = PathIndex::build(&db, &q, t).unwrap();
                for _ in 0..30 {
                    let a = rng.random_range(0..13) as f64;
                    let b = rng.random_range(0..13) as f64;
                    let c = rng.random_range(0..13) as f64;
                    let d = rng.random_range(0..13) as f64;
                    let r = rect2((a.min(b), a.max(b)), (c.min(d), c.max(d)));
                    let want = brute_force_rcq(&q, &db, &r, DEFAULT_BUDGET).unwrap();
                    assert_eq!(idx.rcq(&r).unwrap(), want, "k={k} T={t}");
                }
            }
        }
    }

    #[test]
    fn base_case_agrees_with_star() {
        let mut rng = SmallRng::seed_from_u64(83);
        let (q, db) = random_path_db(&mut rng, 2, 40, 10);
        let star = StarIndex::build(&db, &q, 5).unwrap();
        let path = PathIndex::build(&db, &q, 5).unwrap();
        for _ in 0..40 {
            let a = rng.random_range(0..11) as f64;
            let b = rng.random_range(0..11) as f64;
            let c = rng.random_range(0..11) as f64;
            let d = rng.random_range(0..11) as f64;
            let r = rect2((a.min(b), a.max(b)), (c.min(d), c.max(d)));
            assert_eq!(star.rcq(&r).unwrap(), path.rcq(&r).unwrap());
        }
    }

    #[test]
    fn query_work_bounded() {
        let mut rng = SmallRng::seed_from_u64(89);
        let (q, db) = random_path_db(&mut rng, 3, 60, 15);
        for t in [1u64, 4, 16] {
            let idx = PathIndex::build(&db, &q, t).unwrap();
            let alpha = idx.alpha();
            for _ in 0..30 {
                let a = rng.random_range(0..16) as f64;
                let b = rng.random_range(0..16) as f64;
                let c = rng.random_range(0..16) as f64;
                let d = rng.random_range(0..16) as f64;
                let r = rect2((a.min(b), a.max(b)), (c.min(d), c.max(d)));
                let (_, stats) = idx.rcq_with_stats(&r).unwrap();
                assert!(
                    stats.sub_invocations <= 4 * alpha,
                    "{} sub-queries > 4*alpha={}",
                    stats.sub_invocations,
                    4 * alpha
                );
            }
        }
    }

    #[test]
    fn results_per_instance_total() {
        let mut rng = SmallRng::seed_from_u64(97);
        let (q, db) = random_path_db(&mut rng, 4, 25, 8);
        let idx = PathIndex::build(&db, &q, 8).unwrap();
        let full = rect2(
            (f64::NEG_INFINITY, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        );
        let res = brute_force_results(&q, &db, DEFAULT_BUDGET).unwrap();
        assert_eq!(idx.rcq(&full).unwrap(), res.len() as u64);
    }
}

#[cfg(test)]
mod multi_attr_tests {
    use super::*;
    use crate::oracle::{brute_force_rcq, DEFAULT_BUDGET};
    use crate::rect::Interval;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn multi_attribute_groups_match_oracle() {
        // two-attribute endpoint heads and a two-attribute middle join group
        let q = QuerySpec::parse_text(
            "R1(A1,A1b,B1a,B1b)\nR2(B1a,B1b,B2)\nR3(B2,A2)\nOUTPUT: A1,A1b,A2\n",
        )
        .unwrap();
        assert_eq!(q.classify(), crate::query::QueryClass::Path(3));
        let mut rng = SmallRng::seed_from_u64(107);
        let r1 = Relation::new(
            "R1",
            vec!["A1".into(), "A1b".into(), "B1a".into(), "B1b".into()],
            (0..40)
                .map(|_| {
                    vec![
                        rng.random_range(0..8) as f64,
                        rng.random_range(0..8) as f64,
                        rng.random_range(0..3) as f64,
                        rng.random_range(0..3) as f64,
                    ]
                })
                .collect(),
        )
        .unwrap();
        let r2 = Relation::new(
            "R2",
            vec!["B1a".into(), "B1b".into(), "B2".into()],
            (0..40)
                .map(|_| {
                    vec![
                        rng.random_range(0..3) as f64,
                        rng.random_range(0..3) as f64,
                        rng.random_range(0..4) as f64,
                    ]
                })
                .collect(),
        )
        .unwrap();
        let r3 = Relation::new(
            "R3",
            vec!["B2".into(), "A2".into()],
            (0..40)
                .map(|_| vec![rng.random_range(0..4) as f64, rng.random_range(0..8) as f64])
                .collect(),
        )
        .unwrap();
        let db = DatabaseInstance::new(vec![r1, r2, r3]).unwrap();
        for t in [1u64, 4, 16, 60] {
            let idx = PathIndex::build(&db, &q, t).unwrap();
            for _ in 0..30 {
                let r = Rect::new(
                    q.output()
                        .iter()
                        .map(|a| {
                            let x = rng.random_range(0..9) as f64;
                            let y = rng.random_range(0..9) as f64;
                            (a.clone(), Interval::new(x.min(y), x.max(y)).unwrap())
                        })
                        .collect(),
                )
                .unwrap();
                let want = brute_force_rcq(&q, &db, &r, DEFAULT_BUDGET).unwrap();
                assert_eq!(idx.rcq(&r).unwrap(), want, "T={t}");
            }
        }
    }
}
