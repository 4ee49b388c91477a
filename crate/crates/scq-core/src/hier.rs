//! Attribute-tree index for hierarchical queries with multi-level
//! heavy-light recursion.
//!
//! Attributes with identical atom sets collapse into one tree node; nodes
//! are ordered by strict containment of their atom sets. Every node down to
//! a cutoff level `l` splits the values of its group into heavy and light:
//! light results are materialized and indexed (with ancestor attributes
//! retained as point-constraint dimensions), heavy values recurse into the
//! children. Children at level `l+1` store one tree per heavy parent value
//! over their entire subtree join.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::ann::AnnTree;
use crate::geom::composite::{CInterval, CRect};
use crate::geom::range_tree::{RangeTree, RtSampler};
use crate::heavy_light::IndexModes;
use crate::joins::{bind_reduced, hash_join};
use crate::query::QuerySpec;
use crate::rect::{QueryPoint, Rect};
use crate::relation::{AttributeId, DatabaseInstance, GroupKey, Relation, ValueKey};

/// One node of the attribute tree: a group of attributes sharing the same
/// atom set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttrNode {
    pub group: Vec<AttributeId>,
    /// Atom indices containing this group.
    pub atom_set: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    /// Atoms whose deepest group is this node.
    pub terminal_atoms: Vec<usize>,
}

/// Forest of attribute groups of a hierarchical query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttrTree {
    pub nodes: Vec<AttrNode>,
    /// Root node ids, one per connected component.
    pub roots: Vec<usize>,
}

impl AttrTree {
    pub fn build(q: &QuerySpec) -> Result<AttrTree> {
        if !q.is_hierarchical() {
            return Err(Error::NotHierarchical);
        }
        let groups = q.attr_groups();
        let mut nodes: Vec<AttrNode> = groups
            .iter()
            .map(|g| AttrNode {
                group: g.attrs.clone(),
                atom_set: g.atom_set.iter().copied().collect(),
                parent: None,
                children: Vec::new(),
                depth: 0,
                terminal_atoms: Vec::new(),
            })
            .collect();
        // parent: the smallest strict superset of the atom set
        for i in 0..nodes.len() {
            let mut best: Option<usize> = None;
            for j in 0..nodes.len() {
                if i == j {
                    continue;
                }
                let strictly_contains = nodes[i].atom_set.len() < nodes[j].atom_set.len()
                    && nodes[i].atom_set.iter().all(|a| nodes[j].atom_set.contains(a));
                if strictly_contains
                    && best.is_none_or(|b| nodes[j].atom_set.len() < nodes[b].atom_set.len())
                {
                    best = Some(j);
                }
            }
            nodes[i].parent = best;
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
        // depths by walking down from the roots
        let mut stack: Vec<usize> = roots.clone();
        while let Some(u) = stack.pop() {
            let d = nodes[u].parent.map_or(0, |p| nodes[p].depth + 1);
            nodes[u].depth = d;
            stack.extend(nodes[u].children.iter().copied());
        }
        // terminal atoms: deepest (smallest) group containing each atom
        for atom in 0..q.atoms().len() {
            let home = (0..nodes.len())
                .filter(|&i| nodes[i].atom_set.contains(&atom))
                .min_by_key(|&i| nodes[i].atom_set.len())
                .expect("every atom has at least one attribute group");
            nodes[home].terminal_atoms.push(atom);
        }
        Ok(AttrTree { nodes, roots })
    }

    /// Depth of the deepest leaf (`L`); 0 for a single-node component.
    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Largest subtree atom count among nodes at `depth`, 0 when none.
    pub fn max_atoms_at_depth(&self, depth: usize) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.depth == depth)
            .map(|n| n.atom_set.len())
            .max()
            .unwrap_or(0)
    }

    /// Attributes of the strict ancestors of `v`, root first.
    fn ancestor_attrs(&self, v: usize) -> Vec<AttributeId> {
        let mut chain = Vec::new();
        let mut cur = self.nodes[v].parent;
        while let Some(p) = cur {
            chain.push(p);
            cur = self.nodes[p].parent;
        }
        chain.reverse();
        chain
            .into_iter()
            .flat_map(|p| self.nodes[p].group.iter().cloned())
            .collect()
    }
}

/// Per-query counters.
#[derive(Debug, Clone, Copy, Default)]
pub struct HierStats {
    /// Heavy branches expanded across the recursion.
    pub heavy_branches: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OutSlotMap {
    /// `(dimension index, output position)` for structure dimensions that
    /// are output attributes of the fragment.
    slots: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CutoffChild {
    dims: Vec<AttributeId>,
    tree: RangeTree,
    rows: Vec<Vec<f64>>,
    frag_slots: OutSlotMap,
    ann: BTreeMap<GroupKey, AnnTree>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeavyBranch {
    key: GroupKey,
    cutoff: Vec<CutoffChild>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HierNode {
    group_out: Vec<(usize, usize)>, // (position in group key, output position)
    anc_attrs: Vec<AttributeId>,
    light_dims: Vec<AttributeId>,
    light_tree: RangeTree,
    light_rows: Vec<Vec<f64>>,
    light_slots: OutSlotMap,
    light_ann: BTreeMap<GroupKey, AnnTree>,
    terminals: Vec<(usize, BTreeMap<GroupKey, u64>)>,
    heavy: Vec<HeavyBranch>,
}

/// Multi-level heavy-light index over a hierarchical query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierIndex {
    query: QuerySpec,
    attr_tree: AttrTree,
    level: usize,
    alpha: u64,
    n: u64,
    modes: IndexModes,
    eps: f64,
    nodes: Vec<Option<HierNode>>,
}

impl HierIndex {
    /// Builds the index with time budget `T`. When `level` is `None`, the
    /// recursion cutoff minimizing the predicted space bound
    /// `N^m / T^((m-1)/(l+1)) + N^(m_(l+1))` is chosen.
    pub fn build(
        db: &DatabaseInstance,
        q: &QuerySpec,
        t_budget: u64,
        level: Option<usize>,
        modes: IndexModes,
        eps: Option<f64>,
    ) -> Result<HierIndex> {
        let attr_tree = AttrTree::build(q)?;
        let n_input = db.n();
        if t_budget == 0 || (n_input > 0 && t_budget > n_input) {
            return Err(Error::BadBudget(t_budget));
        }
        let eps = match (modes.ann, eps) {
            (true, Some(e)) if e > 0.0 && e <= 1.0 => e,
            (true, _) => return Err(Error::ModeMismatch("ann mode requires eps in (0, 1]")),
            (false, e) => e.unwrap_or(1.0),
        };
        let atoms = bind_reduced(db, q)?;
        let n: u64 = atoms.iter().map(|r| r.len() as u64).sum();
        let max_level = attr_tree.max_depth().saturating_sub(1);
        let level = match level {
            Some(l) => l.min(attr_tree.max_depth()),
            None => predict_level(&attr_tree, n, t_budget, max_level),
        };
        let alpha = nth_root_ceil(t_budget, (level + 1) as u32);

        let nodes = {
            let mut builder = HierBuilder {
                q,
                attr_tree: &attr_tree,
                atoms: &atoms,
                level,
                alpha,
                n,
                modes,
                eps,
                nodes: vec![None; attr_tree.nodes.len()],
            };
            for &root in &attr_tree.roots {
                builder.build_node(root)?;
            }
            builder.nodes
        };
        Ok(HierIndex {
            query: q.clone(),
            attr_tree,
            level,
            alpha,
            n,
            modes,
            eps,
            nodes,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn attr_tree(&self) -> &AttrTree {
        &self.attr_tree
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    /// Heavy-set size per decomposed node, for bound checks.
    pub fn heavy_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .flatten()
            .map(|n| n.heavy.len())
            .collect()
    }

    /// Exact bag count of query results inside `r`.
    pub fn rcq(&self, r: &Rect) -> Result<u64> {
        Ok(self.rcq_with_stats(r)?.0)
    }

    pub fn rcq_with_stats(&self, r: &Rect) -> Result<(u64, HierStats)> {
        r.validate_for(&self.query)?;
        let mut stats = HierStats::default();
        let mut total = 1u64;
        let mut assign: HashMap<AttributeId, f64> = HashMap::new();
        for &root in &self.attr_tree.roots {
            total *= self.cnt(root, &mut assign, r, &mut stats);
            if total == 0 {
                break;
            }
        }
        Ok((total, stats))
    }

    fn cnt(
        &self,
        v: usize,
        assign: &mut HashMap<AttributeId, f64>,
        r: &Rect,
        stats: &mut HierStats,
    ) -> u64 {
        let data = self.nodes[v].as_ref().expect("node at depth <= level");
        let node = &self.attr_tree.nodes[v];
        let mut total = data.light_tree.count(&dims_crect(&data.light_dims, assign, r));
        'heavy: for hb in &data.heavy {
            if !self.group_passes(v, &hb.key, r) {
                continue;
            }
            stats.heavy_branches += 1;
            let mut prod = 1u64;
            for (atom, map) in &data.terminals {
                self.with_group(v, &hb.key, assign, |assign| {
                    prod = prod.saturating_mul(terminal_count(&self.query, *atom, map, assign));
                });
                if prod == 0 {
                    continue 'heavy;
                }
            }
            if node.depth == self.level {
                for cc in &hb.cutoff {
                    self.with_group(v, &hb.key, assign, |assign| {
                        prod = prod.saturating_mul(cc.tree.count(&dims_crect(&cc.dims, assign, r)));
                    });
                    if prod == 0 {
                        continue 'heavy;
                    }
                }
            } else {
                for &u in &node.children {
                    self.set_group(v, &hb.key, assign);
                    let c = self.cnt(u, assign, r, stats);
                    self.unset_group(v, assign);
                    prod = prod.saturating_mul(c);
                    if prod == 0 {
                        continue 'heavy;
                    }
                }
            }
            total += prod;
        }
        total
    }

    fn group_passes(&self, v: usize, key: &GroupKey, r: &Rect) -> bool {
        self.attr_tree.nodes[v]
            .group
            .iter()
            .zip(key)
            .all(|(a, k)| r.interval_or_full(a).contains(k.value()))
    }

    fn set_group(&self, v: usize, key: &GroupKey, assign: &mut HashMap<AttributeId, f64>) {
        for (a, k) in self.attr_tree.nodes[v].group.iter().zip(key) {
            assign.insert(a.clone(), k.value());
        }
    }

    fn unset_group(&self, v: usize, assign: &mut HashMap<AttributeId, f64>) {
        for a in &self.attr_tree.nodes[v].group {
            assign.remove(a);
        }
    }

    fn with_group<F: FnOnce(&mut HashMap<AttributeId, f64>)>(
        &self,
        v: usize,
        key: &GroupKey,
        assign: &mut HashMap<AttributeId, f64>,
        f: F,
    ) {
        self.set_group(v, key, assign);
        f(assign);
        self.unset_group(v, assign);
    }

    /// A query result within (1+ε) of the nearest one to `point`.
    pub fn ann(&self, point: &QueryPoint) -> Result<Vec<f64>> {
        if !self.modes.ann {
            return Err(Error::ModeMismatch("ann"));
        }
        point.validate_for(&self.query)?;
        let mut out = vec![0.0f64; self.query.output().len()];
        let mut assign: HashMap<AttributeId, f64> = HashMap::new();
        for &root in &self.attr_tree.roots {
            match self.ann_node(root, &mut assign, point) {
                Some(frag) => {
                    for (slot, val) in frag {
                        out[slot] = val;
                    }
                }
                None => return Err(Error::EmptyResult),
            }
        }
        Ok(out)
    }

    fn ann_node(
        &self,
        v: usize,
        assign: &mut HashMap<AttributeId, f64>,
        point: &QueryPoint,
    ) -> Option<Vec<(usize, f64)>> {
        let data = self.nodes[v].as_ref().expect("node at depth <= level");
        let node = &self.attr_tree.nodes[v];
        let chain_key = anc_key(&data.anc_attrs, assign);
        let sub_q = |slots: &OutSlotMap| -> Vec<f64> {
            slots
                .slots
                .iter()
                .map(|&(_, oi)| point.coord(&self.query.output()[oi]).unwrap())
                .collect()
        };
        let mut best: Option<(f64, Vec<(usize, f64)>)> = None;
        let dist2 = |frag: &[(usize, f64)]| -> f64 {
            frag.iter()
                .map(|&(oi, val)| {
                    let q = point.coord(&self.query.output()[oi]).unwrap();
                    (q - val) * (q - val)
                })
                .sum()
        };
        if let Some(tree) = data.light_ann.get(&chain_key) {
            if let Ok((coords, _)) = tree.query(&sub_q(&data.light_slots)) {
                let frag: Vec<(usize, f64)> = data
                    .light_slots
                    .slots
                    .iter()
                    .enumerate()
                    .map(|(i, &(_, oi))| (oi, coords[i]))
                    .collect();
                let d = dist2(&frag);
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, frag));
                }
            }
        }
        'heavy: for hb in &data.heavy {
            let mut frag: Vec<(usize, f64)> = data
                .group_out
                .iter()
                .map(|&(ki, oi)| (oi, hb.key[ki].value()))
                .collect();
            // heavy branches with no matching terminals have no results
            for (atom, map) in &data.terminals {
                let mut cnt = 0;
                self.with_group(v, &hb.key, assign, |assign| {
                    cnt = terminal_count(&self.query, *atom, map, assign);
                });
                if cnt == 0 {
                    continue 'heavy;
                }
            }
            if node.depth == self.level {
                for cc in &hb.cutoff {
                    // the cutoff ann is grouped by the chain above `v` plus
                    // v's own value
                    let mut full_key = chain_key.clone();
                    full_key.extend(hb.key.iter().copied());
                    let sub = cc
                        .ann
                        .get(&full_key)
                        .and_then(|tree| tree.query(&sub_q(&cc.frag_slots)).ok())
                        .map(|(coords, _)| coords.to_vec());
                    match sub {
                        Some(coords) => frag.extend(
                            cc.frag_slots
                                .slots
                                .iter()
                                .enumerate()
                                .map(|(i, &(_, oi))| (oi, coords[i])),
                        ),
                        None => continue 'heavy,
                    }
                }
            } else {
                for &u in &node.children {
                    self.set_group(v, &hb.key, assign);
                    let sub = self.ann_node(u, assign, point);
                    self.unset_group(v, assign);
                    match sub {
                        Some(s) => frag.extend(s),
                        None => continue 'heavy,
                    }
                }
            }
            let d = dist2(&frag);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, frag));
            }
        }
        best.map(|(_, f)| f)
    }

    /// Prepares repeated uniform draws from the results inside `r`.
    pub fn rsq_sampler(&self, r: &Rect) -> Result<HierSampler<'_>> {
        if !self.modes.sample {
            return Err(Error::ModeMismatch("sample"));
        }
        r.validate_for(&self.query)?;
        let mut assign = HashMap::new();
        let mut roots = Vec::new();
        let mut total = 1u64;
        for &root in &self.attr_tree.roots {
            let s = self.sampler_node(root, &mut assign, r);
            total = total.saturating_mul(s.total);
            roots.push(s);
        }
        Ok(HierSampler {
            index: self,
            roots,
            total,
        })
    }

    pub fn rsq<R: Rng + ?Sized>(&self, r: &Rect, rng: &mut R) -> Result<Option<Vec<f64>>> {
        Ok(self.rsq_sampler(r)?.draw(rng))
    }

    fn sampler_node<'a>(
        &'a self,
        v: usize,
        assign: &mut HashMap<AttributeId, f64>,
        r: &Rect,
    ) -> SamplerNode<'a> {
        let data = self.nodes[v].as_ref().expect("node at depth <= level");
        let node = &self.attr_tree.nodes[v];
        let light = data.light_tree.sampler(&dims_crect(&data.light_dims, assign, r));
        let mut total = light.total_weight();
        let mut branches = Vec::new();
        'heavy: for hb in &data.heavy {
            if !self.group_passes(v, &hb.key, r) {
                continue;
            }
            let mut term_mult = 1u64;
            for (atom, map) in &data.terminals {
                self.with_group(v, &hb.key, assign, |assign| {
                    term_mult =
                        term_mult.saturating_mul(terminal_count(&self.query, *atom, map, assign));
                });
                if term_mult == 0 {
                    continue 'heavy;
                }
            }
            let mut z = term_mult;
            let mut children = Vec::new();
            if node.depth == self.level {
                for cc in &hb.cutoff {
                    self.set_group(v, &hb.key, assign);
                    let s = cc.tree.sampler(&dims_crect(&cc.dims, assign, r));
                    self.unset_group(v, assign);
                    z = z.saturating_mul(s.total_weight());
                    children.push(SamplerChild::Cutoff { cc, sampler: s });
                    if z == 0 {
                        continue 'heavy;
                    }
                }
            } else {
                for &u in &node.children {
                    self.set_group(v, &hb.key, assign);
                    let s = self.sampler_node(u, assign, r);
                    self.unset_group(v, assign);
                    z = z.saturating_mul(s.total);
                    children.push(SamplerChild::Rec(s));
                    if z == 0 {
                        continue 'heavy;
                    }
                }
            }
            total += z;
            branches.push(SamplerBranch {
                frag: data
                    .group_out
                    .iter()
                    .map(|&(ki, oi)| (oi, hb.key[ki].value()))
                    .collect(),
                z,
                children,
            });
        }
        SamplerNode {
            data,
            light,
            branches,
            total,
        }
    }

    /// Deterministic stored-entry count.
    pub fn stored_entries(&self) -> u64 {
        let mut total = 0u64;
        for data in self.nodes.iter().flatten() {
            total += data.light_tree.stored_entries();
            total += data
                .light_ann
                .values()
                .map(|a| a.stored_entries())
                .sum::<u64>();
            total += data
                .terminals
                .iter()
                .map(|(_, m)| m.len() as u64)
                .sum::<u64>();
            for hb in &data.heavy {
                total += 1;
                for cc in &hb.cutoff {
                    total += cc.tree.stored_entries();
                    total += cc.ann.values().map(|a| a.stored_entries()).sum::<u64>();
                }
            }
        }
        total
    }
}

struct SamplerNode<'a> {
    data: &'a HierNode,
    light: RtSampler<'a>,
    branches: Vec<SamplerBranch<'a>>,
    total: u64,
}

struct SamplerBranch<'a> {
    frag: Vec<(usize, f64)>,
    z: u64,
    children: Vec<SamplerChild<'a>>,
}

enum SamplerChild<'a> {
    Rec(SamplerNode<'a>),
    Cutoff {
        cc: &'a CutoffChild,
        sampler: RtSampler<'a>,
    },
}

/// Reusable decomposition for uniform draws from a hierarchical index.
pub struct HierSampler<'a> {
    index: &'a HierIndex,
    roots: Vec<SamplerNode<'a>>,
    total: u64,
}

impl HierSampler<'_> {
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if self.total == 0 {
            return None;
        }
        let mut out = vec![0.0f64; self.index.query.output().len()];
        for node in &self.roots {
            draw_node(node, rng, &mut out);
        }
        Some(out)
    }
}

fn draw_node<R: Rng + ?Sized>(node: &SamplerNode<'_>, rng: &mut R, out: &mut [f64]) {
    debug_assert!(node.total > 0);
    let mut pick = rng.random_range(0..node.total);
    if pick < node.light.total_weight() {
        let idx = node.light.draw(rng).expect("light weight positive");
        let payload = node.data.light_tree.point(idx).payload;
        let row = &node.data.light_rows[payload as usize];
        for &(dim, oi) in &node.data.light_slots.slots {
            out[oi] = row[dim];
        }
        return;
    }
    pick -= node.light.total_weight();
    for branch in &node.branches {
        if pick >= branch.z {
            pick -= branch.z;
            continue;
        }
        for &(oi, val) in &branch.frag {
            out[oi] = val;
        }
        for child in &branch.children {
            match child {
                SamplerChild::Rec(sub) => draw_node(sub, rng, out),
                SamplerChild::Cutoff { cc, sampler } => {
                    let idx = sampler.draw(rng).expect("cutoff weight positive");
                    let payload = cc.tree.point(idx).payload;
                    let row = &cc.rows[payload as usize];
                    for &(dim, oi) in &cc.frag_slots.slots {
                        out[oi] = row[dim];
                    }
                }
            }
        }
        return;
    }
    unreachable!("sampler weights inconsistent");
}

struct HierBuilder<'a> {
    q: &'a QuerySpec,
    attr_tree: &'a AttrTree,
    atoms: &'a [Relation],
    level: usize,
    alpha: u64,
    n: u64,
    modes: IndexModes,
    eps: f64,
    nodes: Vec<Option<HierNode>>,
}

impl HierBuilder<'_> {
    fn build_node(&mut self, v: usize) -> Result<()> {
        let tree = self.attr_tree;
        let node = &tree.nodes[v];
        let out = self.q.output();
        let anc_attrs = tree.ancestor_attrs(v);
        let group = &node.group;

        // group the subtree atoms' tuples by this node's value
        let member_atoms: Vec<usize> = node.atom_set.clone();
        let mut sizes: BTreeMap<GroupKey, u64> = BTreeMap::new();
        for &a in &member_atoms {
            let rel = &self.atoms[a];
            let pos: Vec<usize> = group.iter().map(|g| rel.position(g).unwrap()).collect();
            for t in &rel.tuples {
                *sizes.entry(t.key(&pos)).or_insert(0) += 1;
            }
        }

        // light structure dimensions: ancestors first, then the output
        // attributes of the subtree (including this group)
        let subtree_out: Vec<AttributeId> = subtree_out_attrs(tree, v, out);
        let mut light_dims: Vec<AttributeId> = anc_attrs.clone();
        for a in &subtree_out {
            if !light_dims.contains(a) {
                light_dims.push(a.clone());
            }
        }
        let light_slots = OutSlotMap {
            slots: light_dims
                .iter()
                .enumerate()
                .filter_map(|(d, a)| {
                    let oi = out.iter().position(|o| o == a)?;
                    if subtree_out.contains(a) && !anc_attrs.contains(a) {
                        Some((d, oi))
                    } else {
                        None
                    }
                })
                .collect(),
        };

        let mut light_weights: HashMap<Vec<ValueKey>, u64> = HashMap::new();
        let mut heavy_keys: Vec<GroupKey> = Vec::new();
        for (key, size) in &sizes {
            if size.saturating_mul(self.alpha) >= self.n && self.n > 0 {
                heavy_keys.push(key.clone());
            } else {
                // materialize the light join for this value
                let restricted = self.restrict_atoms(&member_atoms, group, key);
                let rows = hash_join(
                    &restricted,
                    &light_dims,
                    &HashMap::new(),
                    crate::oracle::DEFAULT_BUDGET,
                )?;
                for row in rows {
                    *light_weights
                        .entry(row.iter().map(|v| ValueKey::of(*v)).collect())
                        .or_insert(0) += 1;
                }
            }
        }
        assert!(
            heavy_keys.len() as u64 <= self.alpha,
            "heavy set exceeds alpha at node {v}"
        );

        let (light_rows, light_tree) = weighted_tree(light_weights, light_dims.len());
        let light_ann = if self.modes.ann {
            group_ann(&light_rows, &light_dims, &anc_attrs, &light_slots, self.eps)
        } else {
            BTreeMap::new()
        };

        // terminal atom multiplicity maps
        let mut terminals = Vec::new();
        for &a in &node.terminal_atoms {
            let rel = &self.atoms[a];
            let all: Vec<usize> = (0..rel.arity()).collect();
            let mut map: BTreeMap<GroupKey, u64> = BTreeMap::new();
            for t in &rel.tuples {
                *map.entry(t.key(&all)).or_insert(0) += 1;
            }
            terminals.push((a, map));
        }

        // heavy branches
        let mut heavy = Vec::new();
        for key in heavy_keys {
            let mut cutoff = Vec::new();
            if node.depth == self.level {
                for &u in &node.children {
                    cutoff.push(self.build_cutoff(u, group, &key)?);
                }
            }
            heavy.push(HeavyBranch { key, cutoff });
        }
        if node.depth < self.level {
            for &u in &node.children {
                self.build_node(u)?;
            }
        }

        self.nodes[v] = Some(HierNode {
            group_out: group
                .iter()
                .enumerate()
                .filter_map(|(ki, a)| out.iter().position(|o| o == a).map(|oi| (ki, oi)))
                .collect(),
            anc_attrs,
            light_dims,
            light_tree,
            light_rows,
            light_slots,
            light_ann,
            terminals,
            heavy,
        });
        Ok(())
    }

    fn build_cutoff(&self, u: usize, group: &[AttributeId], key: &GroupKey) -> Result<CutoffChild> {
        let out = self.q.output();
        let child = &self.attr_tree.nodes[u];
        let anc_of_u: Vec<AttributeId> = self.attr_tree.ancestor_attrs(u);
        let subtree_out = subtree_out_attrs(self.attr_tree, u, out);
        let mut dims: Vec<AttributeId> = anc_of_u.clone();
        for a in &subtree_out {
            if !dims.contains(a) {
                dims.push(a.clone());
            }
        }
        let frag_slots = OutSlotMap {
            slots: dims
                .iter()
                .enumerate()
                .filter_map(|(d, a)| {
                    let oi = out.iter().position(|o| o == a)?;
                    if subtree_out.contains(a) && !anc_of_u.contains(a) {
                        Some((d, oi))
                    } else {
                        None
                    }
                })
                .collect(),
        };
        let restricted = self.restrict_atoms(&child.atom_set, group, key);
        let rows = hash_join(&restricted, &dims, &HashMap::new(), crate::oracle::DEFAULT_BUDGET)?;
        let mut weights: HashMap<Vec<ValueKey>, u64> = HashMap::new();
        for row in rows {
            *weights
                .entry(row.iter().map(|v| ValueKey::of(*v)).collect())
                .or_insert(0) += 1;
        }
        let (rows, tree) = weighted_tree(weights, dims.len());
        let ann = if self.modes.ann {
            // grouped by the full chain including v's value
            group_ann(&rows, &dims, &anc_of_u, &frag_slots, self.eps)
        } else {
            BTreeMap::new()
        };
        Ok(CutoffChild {
            dims,
            tree,
            rows,
            frag_slots,
            ann,
        })
    }

    /// Sub-relations holding only the tuples whose group projection is `key`.
    fn restrict_atoms(&self, atom_ids: &[usize], group: &[AttributeId], key: &GroupKey) -> Vec<Relation> {
        atom_ids
            .iter()
            .map(|&a| {
                let rel = &self.atoms[a];
                let pos: Vec<usize> = group.iter().map(|g| rel.position(g).unwrap()).collect();
                Relation {
                    name: rel.name.clone(),
                    attrs: rel.attrs.clone(),
                    tuples: rel
                        .tuples
                        .iter()
                        .filter(|t| &t.key(&pos) == key)
                        .cloned()
                        .collect(),
                }
            })
            .collect()
    }
}

/// Output attributes within the groups of `v`'s subtree, in output order.
fn subtree_out_attrs(tree: &AttrTree, v: usize, out: &[AttributeId]) -> Vec<AttributeId> {
    let mut attrs = Vec::new();
    let mut stack = vec![v];
    let mut in_subtree: Vec<AttributeId> = Vec::new();
    while let Some(u) = stack.pop() {
        in_subtree.extend(tree.nodes[u].group.iter().cloned());
        stack.extend(tree.nodes[u].children.iter().copied());
    }
    for a in out {
        if in_subtree.contains(a) {
            attrs.push(a.clone());
        }
    }
    attrs
}

fn terminal_count(
    q: &QuerySpec,
    atom: usize,
    map: &BTreeMap<GroupKey, u64>,
    assign: &HashMap<AttributeId, f64>,
) -> u64 {
    let key: GroupKey = q.atoms()[atom]
        .attrs
        .iter()
        .map(|a| ValueKey::of(assign[a]))
        .collect();
    map.get(&key).copied().unwrap_or(0)
}

fn anc_key(anc_attrs: &[AttributeId], assign: &HashMap<AttributeId, f64>) -> GroupKey {
    anc_attrs.iter().map(|a| ValueKey::of(assign[a])).collect()
}

fn dims_crect(dims: &[AttributeId], assign: &HashMap<AttributeId, f64>, r: &Rect) -> CRect {
    dims.iter()
        .map(|a| {
            let iv = r.interval_or_full(a);
            match assign.get(a) {
                Some(&v) => {
                    if iv.contains(v) {
                        CInterval::at_value(v)
                    } else {
                        CInterval::empty()
                    }
                }
                None => CInterval::from_interval(iv),
            }
        })
        .collect()
}

fn weighted_tree(weights: HashMap<Vec<ValueKey>, u64>, dims: usize) -> (Vec<Vec<f64>>, RangeTree) {
    let mut entries: Vec<(Vec<ValueKey>, u64)> = weights.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let rows: Vec<Vec<f64>> = entries
        .iter()
        .map(|(k, _)| k.iter().map(|v| v.value()).collect())
        .collect();
    let tree = RangeTree::from_values(
        dims,
        entries
            .iter()
            .enumerate()
            .map(|(i, (_, w))| (rows[i].clone(), *w))
            .collect(),
    );
    (rows, tree)
}

/// One approximate-nearest-neighbor tree per ancestor-value combination.
fn group_ann(
    rows: &[Vec<f64>],
    dims: &[AttributeId],
    chain: &[AttributeId],
    slots: &OutSlotMap,
    eps: f64,
) -> BTreeMap<GroupKey, AnnTree> {
    let chain_pos: Vec<usize> = chain
        .iter()
        .map(|a| dims.iter().position(|d| d == a).unwrap())
        .collect();
    let mut groups: BTreeMap<GroupKey, Vec<Vec<f64>>> = BTreeMap::new();
    for row in rows {
        let key: GroupKey = chain_pos.iter().map(|&p| ValueKey::of(row[p])).collect();
        let frag: Vec<f64> = slots.slots.iter().map(|&(d, _)| row[d]).collect();
        groups.entry(key).or_default().push(frag);
    }
    groups
        .into_iter()
        .map(|(k, pts)| {
            let d = slots.slots.len();
            (k, AnnTree::build(d, pts, eps))
        })
        .collect()
}

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

/// Cutoff level minimizing the predicted space bound, summed over the
/// components of the attribute forest.
fn predict_level(tree: &AttrTree, n: u64, t: u64, max_level: usize) -> usize {
    let nf = (n.max(2)) as f64;
    let tf = (t.max(1)) as f64;
    let mut best = (0usize, f64::INFINITY);
    for l in 0..=max_level {
        let mut cost = 0.0;
        for &root in &tree.roots {
            let m = tree.nodes[root].atom_set.len() as f64;
            let m_next = component_max_atoms_at_depth(tree, root, l + 1) as f64;
            cost += nf.powf(m) / tf.powf((m - 1.0) / (l as f64 + 1.0)) + nf.powf(m_next);
        }
        if cost < best.1 {
            best = (l, cost);
        }
    }
    best.0
}

fn component_max_atoms_at_depth(tree: &AttrTree, root: usize, depth: usize) -> usize {
    let mut best = 0;
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        if tree.nodes[u].depth == depth {
            best = best.max(tree.nodes[u].atom_set.len());
        }
        stack.extend(tree.nodes[u].children.iter().copied());
    }
    best
}


#[cfg(test)]
mod edge_tests {
    use super::*;
    use crate::oracle::{brute_force_rcq, DEFAULT_BUDGET};
    use crate::rect::Interval;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn oversized_level_is_clamped() {
        let q = QuerySpec::parse_text(
            "R1(A,B,D)\nR2(A,B,E)\nR3(A,C,F)\nR4(A,C,G)\nOUTPUT: A,B,C,D,E,F,G\n",
        )
        .unwrap();
        let mut rng = SmallRng::seed_from_u64(433);
        let mk = |name: &str, attrs: [&str; 3], rng: &mut SmallRng| {
            Relation::new(
                name,
                attrs.iter().map(|a| AttributeId::from(*a)).collect(),
                (0..10)
                    .map(|_| {
                        vec![
                            rng.random_range(0..3) as f64,
                            rng.random_range(0..4) as f64,
                            rng.random_range(0..4) as f64,
                        ]
                    })
                    .collect(),
            )
            .unwrap()
        };
        let db = DatabaseInstance::new(vec![
            mk("R1", ["A", "B", "D"], &mut rng),
            mk("R2", ["A", "B", "E"], &mut rng),
            mk("R3", ["A", "C", "F"], &mut rng),
            mk("R4", ["A", "C", "G"], &mut rng),
        ])
        .unwrap();
        let idx = HierIndex::build(&db, &q, 4, Some(10), IndexModes::count_only(), None).unwrap();
        assert!(idx.level() <= idx.attr_tree().max_depth());
        for _ in 0..20 {
            let r = Rect::new(
                q.output()
                    .iter()
                    .map(|a| {
                        let x = rng.random_range(0..5) as f64;
                        let y = rng.random_range(0..5) as f64;
                        (a.clone(), Interval::new(x.min(y), x.max(y)).unwrap())
                    })
                    .collect(),
            )
            .unwrap();
            let want = brute_force_rcq(&q, &db, &r, DEFAULT_BUDGET).unwrap();
            assert_eq!(idx.rcq(&r).unwrap(), want);
        }
    }

    #[test]
    fn empty_result_set_errors_on_ann() {
        let q = QuerySpec::parse_text("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,A2\n").unwrap();
        // join values never match: the reduced instance is empty
        let r1 = Relation::new("R1", vec!["A1".into(), "B".into()], vec![vec![1.0, 1.0]]).unwrap();
        let r2 = Relation::new("R2", vec!["A2".into(), "B".into()], vec![vec![2.0, 9.0]]).unwrap();
        let db = DatabaseInstance::new(vec![r1, r2]).unwrap();
        let idx = HierIndex::build(
            &db,
            &q,
            1,
            Some(0),
            IndexModes { ann: true, sample: false },
            Some(0.5),
        )
        .unwrap();
        let p = QueryPoint::new(vec![("A1".into(), 0.0), ("A2".into(), 0.0)]).unwrap();
        assert!(matches!(idx.ann(&p), Err(Error::EmptyResult)));
        let full = Rect::full(q.output());
        assert_eq!(idx.rcq(&full).unwrap(), 0);
    }
}
