//! Range-count index for k-star queries.
//!
//! Each relation's head projection is sorted and cut into blocks of size
//! `alpha`; counts of join results are precomputed for every combination of
//! block-tree nodes across relations. A query decomposes per relation into
//! fully-covered nodes (answered by the precomputed counts) plus at most
//! two partially intersected blocks whose tuples are resolved one by one
//! against a per-join-value primitive index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::blocks::{HeadCanonical, HeadIndex};
use crate::geom::composite::{CInterval, CKey, CRect};
use crate::geom::range_tree::{RangeTree, RtPoint};
use crate::joins::bind_reduced;
use crate::query::{QueryClass, QuerySpec};
use crate::rect::Rect;
use crate::relation::{AttributeId, DatabaseInstance, GroupKey, Relation};

/// Dense counter tensor over combo-node ids, one dimension per relation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComboCounts {
    dims: Vec<u32>,
    data: Vec<u64>,
}

impl ComboCounts {
    pub fn zeros(dims: Vec<u32>) -> ComboCounts {
        let len = dims.iter().map(|&d| d as usize).product();
        ComboCounts {
            dims,
            data: vec![0; len],
        }
    }

    #[inline]
    fn offset(&self, ids: &[u32]) -> usize {
        debug_assert_eq!(ids.len(), self.dims.len());
        let mut off = 0usize;
        for (i, &id) in ids.iter().enumerate() {
            debug_assert!(id < self.dims[i]);
            off = off * self.dims[i] as usize + id as usize;
        }
        off
    }

    pub fn get(&self, ids: &[u32]) -> u64 {
        if self.data.is_empty() {
            return 0;
        }
        self.data[self.offset(ids)]
    }

    pub fn add(&mut self, ids: &[u32], v: u64) {
        let off = self.offset(ids);
        self.data[off] += v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Resolved shape of a star query: per-relation head groups and the shared
/// join group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarLayout {
    /// Per relation: the head (non-join) attributes, in atom order.
    pub head_groups: Vec<Vec<AttributeId>>,
    /// Per relation: positions of the head attributes in the atom.
    pub head_positions: Vec<Vec<usize>>,
    /// Positions of the join attributes in each atom.
    pub b_positions: Vec<Vec<usize>>,
    /// The join attributes, in first-appearance order.
    pub b_attrs: Vec<AttributeId>,
}

impl StarLayout {
    /// Derives the layout from already-bound atoms and explicit head groups;
    /// the join group is everything else and must be shared by every atom.
    pub fn from_heads(atoms: &[Relation], head_groups: Vec<Vec<AttributeId>>) -> StarLayout {
        assert_eq!(atoms.len(), head_groups.len());
        let mut head_positions = Vec::new();
        let mut b_positions = Vec::new();
        let mut b_attrs: Vec<AttributeId> = Vec::new();
        for (rel, heads) in atoms.iter().zip(&head_groups) {
            head_positions.push(heads.iter().map(|a| rel.position(a).unwrap()).collect());
            let bp: Vec<usize> = rel
                .attrs
                .iter()
                .enumerate()
                .filter(|(_, a)| !heads.contains(a))
                .map(|(i, _)| i)
                .collect();
            if b_attrs.is_empty() {
                b_attrs = bp.iter().map(|&i| rel.attrs[i].clone()).collect();
            }
            // align join positions to the shared attribute order
            let aligned: Vec<usize> = b_attrs
                .iter()
                .map(|a| rel.position(a).expect("atoms disagree on join group"))
                .collect();
            debug_assert_eq!(aligned.len(), bp.len(), "atoms disagree on join group");
            b_positions.push(aligned);
        }
        StarLayout {
            head_groups,
            head_positions,
            b_positions,
            b_attrs,
        }
    }

    pub fn from_query(q: &QuerySpec, atoms: &[Relation]) -> StarLayout {
        let join: Vec<AttributeId> = q.join_attrs();
        let head_groups: Vec<Vec<AttributeId>> = atoms
            .iter()
            .map(|rel| {
                rel.attrs
                    .iter()
                    .filter(|a| !join.contains(a))
                    .cloned()
                    .collect()
            })
            .collect();
        StarLayout::from_heads(atoms, head_groups)
    }

    pub fn k(&self) -> usize {
        self.head_groups.len()
    }

    /// Composite coordinates of a tuple's head projection in relation `i`.
    pub fn head_coords(&self, i: usize, rel: &Relation, tid: u32) -> Vec<CKey> {
        let t = &rel.tuples[tid as usize];
        self.head_positions[i]
            .iter()
            .map(|&p| CKey::of(t.values[p], t.id))
            .collect()
    }

    pub fn b_key(&self, i: usize, rel: &Relation, tid: u32) -> GroupKey {
        rel.tuples[tid as usize].key(&self.b_positions[i])
    }
}

/// Per-join-value index: for each join value `b` and relation `i`, a range
/// tree over the head projections of the tuples carrying `b`. Join values
/// are interned as dense ids (assigned in key order) so the per-tuple hot
/// path is an array index, not a map lookup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveIndex {
    ids: BTreeMap<GroupKey, u32>,
    trees: Vec<Vec<RangeTree>>,
}

impl PrimitiveIndex {
    /// Builds the primitive index for a star query; the database is
    /// semijoin-reduced first.
    pub fn build(db: &DatabaseInstance, q: &QuerySpec) -> Result<PrimitiveIndex> {
        let k = match q.classify() {
            QueryClass::Star(k) | QueryClass::GeneralizedStar(k) => k,
            other => {
                return Err(Error::WrongClass {
                    expected: "k-star".into(),
                    found: other.to_string(),
                })
            }
        };
        let atoms = bind_reduced(db, q)?;
        debug_assert_eq!(atoms.len(), k);
        let layout = StarLayout::from_query(q, &atoms);
        Ok(PrimitiveIndex::from_atoms(&layout, &atoms))
    }

    pub fn from_atoms(layout: &StarLayout, atoms: &[Relation]) -> PrimitiveIndex {
        let k = layout.k();
        let mut grouped: BTreeMap<GroupKey, Vec<Vec<RtPoint>>> = BTreeMap::new();
        for (i, rel) in atoms.iter().enumerate() {
            for t in &rel.tuples {
                let b = layout.b_key(i, rel, t.id);
                let slot = grouped.entry(b).or_insert_with(|| vec![Vec::new(); k]);
                slot[i].push(RtPoint {
                    coords: layout.head_coords(i, rel, t.id),
                    weight: 1,
                    payload: t.id,
                });
            }
        }
        let mut ids = BTreeMap::new();
        let mut trees = Vec::with_capacity(grouped.len());
        for (b, per_rel) in grouped {
            ids.insert(b, trees.len() as u32);
            trees.push(
                per_rel
                    .into_iter()
                    .enumerate()
                    .map(|(i, pts)| RangeTree::build(layout.head_groups[i].len(), pts))
                    .collect::<Vec<RangeTree>>(),
            );
        }
        PrimitiveIndex { ids, trees }
    }

    /// Dense id of a join value, when present.
    pub fn id_of(&self, b: &GroupKey) -> Option<u32> {
        self.ids.get(b).copied()
    }

    /// Count of tuples of relation `i` with join value `b` inside the
    /// composite rectangle; 0 when `b` is absent.
    pub fn count_dim(&self, b: &GroupKey, i: usize, rect: &CRect) -> u64 {
        match self.id_of(b) {
            Some(id) => self.count_dim_by_id(id, i, rect),
            None => 0,
        }
    }

    #[inline]
    pub fn count_dim_by_id(&self, id: u32, i: usize, rect: &CRect) -> u64 {
        self.trees[id as usize][i].count(rect)
    }

    /// Product count across all relations: star results with join value `b`
    /// whose per-relation head projections fall in the given rectangles.
    pub fn count(&self, b: &GroupKey, rects: &[CRect]) -> u64 {
        let Some(id) = self.id_of(b) else { return 0 };
        let mut prod = 1u64;
        for (t, r) in self.trees[id as usize].iter().zip(rects) {
            prod *= t.count(r);
            if prod == 0 {
                return 0;
            }
        }
        prod
    }

    pub fn num_values(&self) -> usize {
        self.trees.len()
    }

    pub fn stored_entries(&self) -> u64 {
        self.ids.len() as u64
            + self
                .trees
                .iter()
                .flat_map(|ts| ts.iter().map(|t| t.stored_entries()))
                .sum::<u64>()
    }
}

/// Per-query evaluation counters.
#[derive(Debug, Clone, Default)]
pub struct QueryStats {
    /// Tuples of partially intersected blocks that were enumerated.
    pub partial_tuples: u64,
    /// Primitive-index range-tree counts issued.
    pub prim_queries: u64,
    /// Count contributed by precomputed combination counters.
    pub l1: u64,
    /// Count contributed per relation by enumerated tuples.
    pub l2: Vec<u64>,
}

/// The space-time tunable star index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarIndex {
    query: Option<QuerySpec>,
    layout: StarLayout,
    alpha: u64,
    atoms: Vec<Relation>,
    heads: Vec<HeadIndex>,
    prim: PrimitiveIndex,
    /// Per atom, each tuple's interned join-value id.
    b_ids: Vec<Vec<u32>>,
    combos: ComboCounts,
    node_maps: Vec<Vec<BTreeMap<GroupKey, u64>>>,
}

impl StarIndex {
    /// Builds the index with time budget `T` (block size `alpha = T`).
    pub fn build(db: &DatabaseInstance, q: &QuerySpec, t_budget: u64) -> Result<StarIndex> {
        match q.classify() {
            QueryClass::Star(_) => {}
            other => {
                return Err(Error::WrongClass {
                    expected: "k-star".into(),
                    found: other.to_string(),
                })
            }
        }
        let n = db.n();
        if t_budget == 0 || (n > 0 && t_budget > n) {
            return Err(Error::BadBudget(t_budget));
        }
        let atoms = bind_reduced(db, q)?;
        let layout = StarLayout::from_query(q, &atoms);
        let mut idx = StarIndex::from_atoms(layout, atoms, t_budget.max(1));
        idx.query = Some(q.clone());
        Ok(idx)
    }

    /// Internal constructor over already-reduced atoms with explicit layout.
    /// Tuple ids must be stable: recursive callers pass composite intervals
    /// that reference them.
    pub(crate) fn from_atoms(layout: StarLayout, atoms: Vec<Relation>, alpha: u64) -> StarIndex {
        let k = layout.k();
        let heads: Vec<HeadIndex> = atoms
            .iter()
            .enumerate()
            .map(|(i, rel)| {
                let coords = rel
                    .tuples
                    .iter()
                    .map(|t| (t.id, layout.head_coords(i, rel, t.id)))
                    .collect();
                HeadIndex::build(layout.head_groups[i].len(), coords, alpha as usize)
            })
            .collect();
        let prim = PrimitiveIndex::from_atoms(&layout, &atoms);
        let b_ids: Vec<Vec<u32>> = atoms
            .iter()
            .enumerate()
            .map(|(i, rel)| {
                rel.tuples
                    .iter()
                    .map(|t| {
                        prim.id_of(&layout.b_key(i, rel, t.id))
                            .expect("every tuple's join value is interned")
                    })
                    .collect()
            })
            .collect();
        let node_maps: Vec<Vec<BTreeMap<GroupKey, u64>>> = (0..k)
            .map(|i| heads[i].combo_maps(&|tid| layout.b_key(i, &atoms[i], tid)))
            .collect();
        let combos = compute_combos(&node_maps, k);
        StarIndex {
            query: None,
            layout,
            alpha,
            atoms,
            heads,
            prim,
            b_ids,
            combos,
            node_maps,
        }
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    /// The query this index was built for; internal sub-indexes built by
    /// the path recursion carry no query.
    pub fn query(&self) -> &QuerySpec {
        self.query.as_ref().expect("public index carries its query")
    }

    pub fn layout(&self) -> &StarLayout {
        &self.layout
    }

    pub fn heads(&self) -> &[HeadIndex] {
        &self.heads
    }

    pub fn primitive(&self) -> &PrimitiveIndex {
        &self.prim
    }

    /// Precomputed count for a combination of combo-node ids.
    pub fn combo_at(&self, ids: &[u32]) -> u64 {
        self.combos.get(ids)
    }

    /// Exact bag count of query results inside `r`.
    pub fn rcq(&self, r: &Rect) -> Result<u64> {
        Ok(self.rcq_with_stats(r)?.0)
    }

    pub fn rcq_with_stats(&self, r: &Rect) -> Result<(u64, QueryStats)> {
        let q = self.query.as_ref().expect("public index carries its query");
        r.validate_for(q)?;
        let group_rects = self.group_rects_from(r);
        Ok(self.rcq_crects_with_stats(&group_rects))
    }

    /// Per-relation composite rectangles from a value rectangle keyed by
    /// output attributes; unconstrained head attributes become full lines.
    fn group_rects_from(&self, r: &Rect) -> Vec<CRect> {
        self.layout
            .head_groups
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|a| CInterval::from_interval(r.interval_or_full(a)))
                    .collect()
            })
            .collect()
    }

    pub(crate) fn rcq_crects(&self, group_rects: &[CRect]) -> u64 {
        self.rcq_crects_with_stats(group_rects).0
    }

    pub(crate) fn rcq_crects_with_stats(&self, group_rects: &[CRect]) -> (u64, QueryStats) {
        let k = self.layout.k();
        let mut stats = QueryStats {
            l2: vec![0; k],
            ..Default::default()
        };
        let cans: Vec<HeadCanonical> = (0..k)
            .map(|i| self.heads[i].canonical(&group_rects[i]))
            .collect();
        // l1: precomputed counts over covered-node combinations
        let mut l1 = 0u64;
        let mut ids = vec![0u32; k];
        sum_combos(&self.combos, &cans, 0, &mut ids, &mut l1);
        stats.l1 = l1;
        // l2: enumerate tuples of partially intersected blocks
        let mut total = l1;
        for i in 0..k {
            let mut li = 0u64;
            for &tid in &cans[i].partial_tuples {
                stats.partial_tuples += 1;
                let b = self.b_ids[i][tid as usize];
                // the tuple's own dimension contributes exactly itself: its
                // composite point is unique in the primitive tree
                let mut x = 1u64;
                for j in 0..k {
                    if j == i {
                        continue;
                    }
                    let c = if j < i {
                        let mut covered = 0u64;
                        for rect in &cans[j].covered_rects {
                            covered += self.prim.count_dim_by_id(b, j, rect);
                            stats.prim_queries += 1;
                        }
                        covered
                    } else {
                        stats.prim_queries += 1;
                        self.prim.count_dim_by_id(b, j, &group_rects[j])
                    };
                    x *= c;
                    if x == 0 {
                        break;
                    }
                }
                li += x;
            }
            stats.l2[i] = li;
            total += li;
        }
        (total, stats)
    }

    /// Deterministic stored-entry count: tree nodes, map entries,
    /// precomputed counters, and stored tuple references.
    pub fn stored_entries(&self) -> u64 {
        let heads: u64 = self.heads.iter().map(|h| h.stored_entries()).sum();
        let maps: u64 = self
            .node_maps
            .iter()
            .flat_map(|per_rel| per_rel.iter().map(|m| m.len() as u64))
            .sum();
        let ids: u64 = self.b_ids.iter().map(|v| v.len() as u64).sum();
        heads + maps + ids + self.prim.stored_entries() + self.combos.len() as u64
    }
}

fn sum_combos(
    combos: &ComboCounts,
    cans: &[HeadCanonical],
    depth: usize,
    ids: &mut Vec<u32>,
    acc: &mut u64,
) {
    if depth == cans.len() {
        *acc += combos.get(ids);
        return;
    }
    for &id in &cans[depth].covered_ids {
        ids[depth] = id;
        sum_combos(combos, cans, depth + 1, ids, acc);
    }
}

/// Combination counts from per-node join-value maps: for every combination
/// of nodes, the number of join results whose per-relation source tuples
/// lie under them. Accumulated per join value over the nodes carrying it.
fn compute_combos(node_maps: &[Vec<BTreeMap<GroupKey, u64>>], k: usize) -> ComboCounts {
    let dims: Vec<u32> = node_maps.iter().map(|m| m.len() as u32).collect();
    let mut combos = ComboCounts::zeros(dims);
    if node_maps.iter().any(|m| m.is_empty()) {
        return combos;
    }
    // invert: join value -> (node, count) list per relation
    let mut by_value: Vec<BTreeMap<&GroupKey, Vec<(u32, u64)>>> = vec![BTreeMap::new(); k];
    for (i, maps) in node_maps.iter().enumerate() {
        for (node, map) in maps.iter().enumerate() {
            for (key, cnt) in map {
                by_value[i].entry(key).or_default().push((node as u32, *cnt));
            }
        }
    }
    let mut ids = vec![0u32; k];
    let keys: Vec<&GroupKey> = by_value[0].keys().copied().collect();
    for key in keys {
        let lists: Vec<&Vec<(u32, u64)>> = match by_value.iter().map(|m| m.get(key)).collect() {
            Some(lists) => lists,
            None => continue,
        };
        add_products(&mut combos, &lists, 0, 1, &mut ids);
    }
    combos
}

fn add_products(
    combos: &mut ComboCounts,
    lists: &[&Vec<(u32, u64)>],
    depth: usize,
    prod: u64,
    ids: &mut Vec<u32>,
) {
    if depth == lists.len() {
        combos.add(ids, prod);
        return;
    }
    for &(node, cnt) in lists[depth] {
        ids[depth] = node;
        add_products(combos, lists, depth + 1, prod * cnt, ids);
    }
}
