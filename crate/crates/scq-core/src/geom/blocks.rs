//! Block partitions of a relation's head-attribute projection.
//!
//! For a single head attribute, tuples are sorted by composite key and cut
//! into blocks of size `alpha`; a binary tree over the blocks supports
//! canonical decomposition of an interval into fully-covered nodes plus at
//! most two partially intersected boundary blocks.
//!
//! For a multi-attribute head group, a layered range tree is built whose
//! last-level nodes holding at least `alpha` points play the role of
//! blocks; canonical nodes below that threshold are handled by enumerating
//! their points.
//!
//! Both variants expose the same query interface: canonical combo-node ids
//! (for precomputed counters), the covered region as disjoint composite
//! rectangles, and the in-range tuples that must be enumerated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::composite::{CInterval, CKey, CRect};
use crate::relation::GroupKey;

/// Result of a canonical query against a block structure.
#[derive(Debug, Clone, Default)]
pub struct HeadCanonical {
    /// Combo ids of maximal fully-covered nodes; pairwise disjoint.
    pub covered_ids: Vec<u32>,
    /// Disjoint composite rectangles selecting exactly the covered tuples.
    pub covered_rects: Vec<CRect>,
    /// Tuples inside the query range but not in any covered node.
    pub partial_tuples: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BtNode {
    /// Inclusive leaf-block range below this node.
    leaf_lo: u32,
    leaf_hi: u32,
    children: Option<(u32, u32)>,
}

/// Sorted block partition of one composite-key column with a tree over the
/// blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockTree {
    alpha: usize,
    keys: Vec<CKey>,
    tuple_ids: Vec<u32>,
    /// Nodes in children-before-parents order; the root is last.
    nodes: Vec<BtNode>,
    /// Node index of each leaf block.
    leaf_nodes: Vec<u32>,
}

impl BlockTree {
    pub fn build(mut entries: Vec<(u32, CKey)>, alpha: usize) -> BlockTree {
        assert!(alpha >= 1);
        entries.sort_by_key(|e| e.1);
        let keys: Vec<CKey> = entries.iter().map(|e| e.1).collect();
        let tuple_ids: Vec<u32> = entries.iter().map(|e| e.0).collect();
        let n = keys.len();
        let num_blocks = n.div_ceil(alpha);
        let mut nodes = Vec::new();
        let mut leaf_nodes = vec![0u32; num_blocks];
        if num_blocks > 0 {
            build_bt(0, num_blocks - 1, &mut nodes, &mut leaf_nodes);
        }
        BlockTree {
            alpha,
            keys,
            tuple_ids,
            nodes,
            leaf_nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn num_blocks(&self) -> usize {
        self.keys.len().div_ceil(self.alpha)
    }

    pub fn combo_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_children(&self, id: u32) -> Option<(u32, u32)> {
        self.nodes[id as usize].children
    }

    /// Positions `[start, end)` of leaf block `j`.
    fn block_range(&self, j: usize) -> (usize, usize) {
        (j * self.alpha, ((j + 1) * self.alpha).min(self.keys.len()))
    }

    /// Tuple ids stored under combo node `id`.
    pub fn node_tuples(&self, id: u32) -> &[u32] {
        let node = &self.nodes[id as usize];
        let (s, _) = self.block_range(node.leaf_lo as usize);
        let (_, e) = self.block_range(node.leaf_hi as usize);
        &self.tuple_ids[s..e]
    }

    pub fn canonical(&self, q: &CInterval) -> HeadCanonical {
        let mut out = HeadCanonical::default();
        let n = self.keys.len();
        if q.is_empty() || n == 0 {
            return out;
        }
        let p_lo = self.keys.partition_point(|k| *k < q.lo);
        let p_hi = self.keys.partition_point(|k| *k <= q.hi);
        if p_lo >= p_hi {
            return out;
        }
        let num_blocks = self.num_blocks();
        let first_covered = p_lo.div_ceil(self.alpha);
        let end_covered = if p_hi == n {
            num_blocks
        } else {
            p_hi / self.alpha
        };
        let (cs, ce) = if first_covered < end_covered {
            let cs = first_covered * self.alpha;
            let ce = (end_covered * self.alpha).min(n);
            out.covered_rects
                .push(vec![CInterval::new(self.keys[cs], self.keys[ce - 1])]);
            self.collect_covered(
                (self.nodes.len() - 1) as u32,
                first_covered as u32,
                (end_covered - 1) as u32,
                &mut out.covered_ids,
            );
            (cs, ce)
        } else {
            (p_hi, p_hi)
        };
        for p in p_lo..cs.min(p_hi) {
            out.partial_tuples.push(self.tuple_ids[p]);
        }
        for p in ce.max(p_lo)..p_hi {
            out.partial_tuples.push(self.tuple_ids[p]);
        }
        out
    }

    fn collect_covered(&self, idx: u32, lo: u32, hi: u32, out: &mut Vec<u32>) {
        let node = &self.nodes[idx as usize];
        if node.leaf_lo > hi || node.leaf_hi < lo {
            return;
        }
        if lo <= node.leaf_lo && node.leaf_hi <= hi {
            out.push(idx);
            return;
        }
        let (l, r) = node.children.expect("partial node must be internal");
        self.collect_covered(l, lo, hi, out);
        self.collect_covered(r, lo, hi, out);
    }

    /// Per-combo-node multiplicity maps of `key_of(tuple_id)`, built
    /// bottom-up (leaf maps, then merges).
    pub fn combo_maps(&self, key_of: &dyn Fn(u32) -> GroupKey) -> Vec<BTreeMap<GroupKey, u64>> {
        let mut maps: Vec<BTreeMap<GroupKey, u64>> = vec![BTreeMap::new(); self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            match node.children {
                None => {
                    let (s, e) = self.block_range(node.leaf_lo as usize);
                    for p in s..e {
                        *maps[idx].entry(key_of(self.tuple_ids[p])).or_insert(0) += 1;
                    }
                }
                Some((l, r)) => {
                    // children precede parents in node order
                    let mut merged = maps[l as usize].clone();
                    for (k, v) in &maps[r as usize] {
                        *merged.entry(k.clone()).or_insert(0) += v;
                    }
                    maps[idx] = merged;
                }
            }
        }
        maps
    }

    pub fn stored_entries(&self) -> u64 {
        (self.nodes.len() + self.tuple_ids.len()) as u64
    }
}

fn build_bt(lo: usize, hi: usize, nodes: &mut Vec<BtNode>, leaf_nodes: &mut [u32]) -> u32 {
    let children = if lo == hi {
        None
    } else {
        let mid = (lo + hi) / 2;
        let l = build_bt(lo, mid, nodes, leaf_nodes);
        let r = build_bt(mid + 1, hi, nodes, leaf_nodes);
        Some((l, r))
    };
    nodes.push(BtNode {
        leaf_lo: lo as u32,
        leaf_hi: hi as u32,
        children,
    });
    let idx = (nodes.len() - 1) as u32;
    if lo == hi {
        leaf_nodes[lo] = idx;
    }
    idx
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MbNode {
    start: u32,
    end: u32,
    lo: CKey,
    hi: CKey,
    children: Option<(u32, u32)>,
    /// Secondary tree (next dimension) over this node's points.
    secondary: Option<u32>,
    /// Combo id when this is a last-level node with >= alpha points.
    combo: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LevelTree {
    /// Dimension this tree is sorted on.
    dim: usize,
    tuple_ids: Vec<u32>,
    nodes: Vec<MbNode>,
    root: u32,
}

/// Layered range tree over a multi-attribute head group with the last level
/// pruned at `alpha` points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiBlockTree {
    dims: usize,
    alpha: usize,
    trees: Vec<LevelTree>,
    top: Option<u32>,
    combo_len: u32,
    num_tuples: usize,
}

impl MultiBlockTree {
    pub fn build(dims: usize, coords: Vec<(u32, Vec<CKey>)>, alpha: usize) -> MultiBlockTree {
        assert!(dims >= 2);
        assert!(alpha >= 1);
        assert!(coords.iter().all(|(_, c)| c.len() == dims));
        let num_tuples = coords.len();
        let mut builder = MbBuilder {
            dims,
            alpha,
            coords,
            trees: Vec::new(),
            combo_len: 0,
        };
        let top = if builder.coords.is_empty() {
            None
        } else {
            let ids: Vec<u32> = (0..builder.coords.len() as u32).collect();
            Some(builder.build_level(ids, 0))
        };
        MultiBlockTree {
            dims,
            alpha,
            trees: builder.trees,
            top,
            combo_len: builder.combo_len,
            num_tuples,
        }
    }

    pub fn combo_len(&self) -> usize {
        self.combo_len as usize
    }

    pub fn canonical(&self, rect: &CRect) -> HeadCanonical {
        assert_eq!(rect.len(), self.dims);
        let mut out = HeadCanonical::default();
        if let Some(top) = self.top {
            let mut prefix = Vec::with_capacity(self.dims);
            self.walk(top, rect, &mut prefix, &mut out);
        }
        out
    }

    fn walk(&self, tree_idx: u32, rect: &CRect, prefix: &mut Vec<CInterval>, out: &mut HeadCanonical) {
        let tree = &self.trees[tree_idx as usize];
        let q = &rect[tree.dim];
        if q.is_empty() {
            return;
        }
        self.walk_node(tree, tree.root, q, rect, prefix, out);
    }

    fn walk_node(
        &self,
        tree: &LevelTree,
        idx: u32,
        q: &CInterval,
        rect: &CRect,
        prefix: &mut Vec<CInterval>,
        out: &mut HeadCanonical,
    ) {
        let node = &tree.nodes[idx as usize];
        let hull = CInterval::new(node.lo, node.hi);
        if !q.intersects(&hull) {
            return;
        }
        if q.contains_interval(&hull) {
            // canonical at this level
            if tree.dim + 1 == self.dims {
                match node.combo {
                    Some(c) => {
                        out.covered_ids.push(c);
                        let mut r = prefix.clone();
                        r.push(hull);
                        out.covered_rects.push(r);
                    }
                    None => out
                        .partial_tuples
                        .extend_from_slice(&tree.tuple_ids[node.start as usize..node.end as usize]),
                }
            } else {
                prefix.push(hull);
                self.walk(node.secondary.unwrap(), rect, prefix, out);
                prefix.pop();
            }
            return;
        }
        match node.children {
            Some((l, r)) => {
                self.walk_node(tree, l, q, rect, prefix, out);
                self.walk_node(tree, r, q, rect, prefix, out);
            }
            // single-point leaf: hull is a point, so intersecting but not
            // contained cannot happen
            None => unreachable!("point leaf neither inside nor disjoint"),
        }
    }

    /// Per-combo-node multiplicity maps, built bottom-up within each
    /// last-level tree.
    pub fn combo_maps(&self, key_of: &dyn Fn(u32) -> GroupKey) -> Vec<BTreeMap<GroupKey, u64>> {
        let mut out: Vec<BTreeMap<GroupKey, u64>> = vec![BTreeMap::new(); self.combo_len as usize];
        for tree in &self.trees {
            if tree.dim + 1 != self.dims {
                continue;
            }
            // nodes are in children-before-parents order
            let mut maps: Vec<BTreeMap<GroupKey, u64>> = vec![BTreeMap::new(); tree.nodes.len()];
            for (idx, node) in tree.nodes.iter().enumerate() {
                match node.children {
                    None => {
                        for p in node.start..node.end {
                            *maps[idx]
                                .entry(key_of(tree.tuple_ids[p as usize]))
                                .or_insert(0) += 1;
                        }
                    }
                    Some((l, r)) => {
                        let mut merged = maps[l as usize].clone();
                        for (k, v) in &maps[r as usize] {
                            *merged.entry(k.clone()).or_insert(0) += v;
                        }
                        maps[idx] = merged;
                    }
                }
                if let Some(c) = node.combo {
                    out[c as usize] = maps[idx].clone();
                }
            }
        }
        out
    }

    pub fn stored_entries(&self) -> u64 {
        self.trees
            .iter()
            .map(|t| (t.nodes.len() + t.tuple_ids.len()) as u64)
            .sum()
    }

    pub fn num_tuples(&self) -> usize {
        self.num_tuples
    }
}

struct MbBuilder {
    dims: usize,
    alpha: usize,
    coords: Vec<(u32, Vec<CKey>)>,
    trees: Vec<LevelTree>,
    combo_len: u32,
}

impl MbBuilder {
    fn build_level(&mut self, mut ids: Vec<u32>, dim: usize) -> u32 {
        ids.sort_by(|a, b| {
            self.coords[*a as usize].1[dim].cmp(&self.coords[*b as usize].1[dim])
        });
        let tree_idx = self.trees.len() as u32;
        self.trees.push(LevelTree {
            dim,
            tuple_ids: ids.iter().map(|&i| self.coords[i as usize].0).collect(),
            nodes: Vec::new(),
            root: 0,
        });
        let n = ids.len();
        let root = self.build_node(tree_idx, &ids, 0, n, dim);
        self.trees[tree_idx as usize].root = root;
        tree_idx
    }

    fn build_node(&mut self, tree_idx: u32, ids: &[u32], start: usize, end: usize, dim: usize) -> u32 {
        let children = if end - start > 1 {
            let mid = (start + end) / 2;
            let l = self.build_node(tree_idx, ids, start, mid, dim);
            let r = self.build_node(tree_idx, ids, mid, end, dim);
            Some((l, r))
        } else {
            None
        };
        let lo = self.coords[ids[start] as usize].1[dim];
        let hi = self.coords[ids[end - 1] as usize].1[dim];
        let last_level = dim + 1 == self.dims;
        let combo = if last_level && end - start >= self.alpha {
            self.combo_len += 1;
            Some(self.combo_len - 1)
        } else {
            None
        };
        let secondary = if !last_level {
            Some(self.build_level(ids[start..end].to_vec(), dim + 1))
        } else {
            None
        };
        let node = MbNode {
            start: start as u32,
            end: end as u32,
            lo,
            hi,
            children,
            secondary,
            combo,
        };
        let tree = &mut self.trees[tree_idx as usize];
        tree.nodes.push(node);
        (tree.nodes.len() - 1) as u32
    }
}

/// Block structure over a relation's head group: one sorted block partition
/// for a single attribute, a pruned layered tree for several.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HeadIndex {
    One(BlockTree),
    Many(MultiBlockTree),
}

impl HeadIndex {
    pub fn build(dims: usize, coords: Vec<(u32, Vec<CKey>)>, alpha: usize) -> HeadIndex {
        if dims == 1 {
            HeadIndex::One(BlockTree::build(
                coords.into_iter().map(|(id, c)| (id, c[0])).collect(),
                alpha,
            ))
        } else {
            HeadIndex::Many(MultiBlockTree::build(dims, coords, alpha))
        }
    }

    pub fn combo_len(&self) -> usize {
        match self {
            HeadIndex::One(t) => t.combo_len(),
            HeadIndex::Many(t) => t.combo_len(),
        }
    }

    pub fn canonical(&self, rect: &CRect) -> HeadCanonical {
        match self {
            HeadIndex::One(t) => {
                debug_assert_eq!(rect.len(), 1);
                t.canonical(&rect[0])
            }
            HeadIndex::Many(t) => t.canonical(rect),
        }
    }

    pub fn combo_maps(&self, key_of: &dyn Fn(u32) -> GroupKey) -> Vec<BTreeMap<GroupKey, u64>> {
        match self {
            HeadIndex::One(t) => t.combo_maps(key_of),
            HeadIndex::Many(t) => t.combo_maps(key_of),
        }
    }

    pub fn stored_entries(&self) -> u64 {
        match self {
            HeadIndex::One(t) => t.stored_entries(),
            HeadIndex::Many(t) => t.stored_entries(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::composite::crect_from_intervals;
    use crate::rect::Interval;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn tree_of(vals: &[f64], alpha: usize) -> BlockTree {
        BlockTree::build(
            vals.iter()
                .enumerate()
                .map(|(i, &v)| (i as u32, CKey::of(v, i as u32)))
                .collect(),
            alpha,
        )
    }

    #[test]
    fn covering_interval_yields_root_only() {
        let t = tree_of(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2);
        let q = CInterval::from_interval(Interval::full());
        let c = t.canonical(&q);
        assert_eq!(c.covered_ids, vec![(t.combo_len() - 1) as u32]);
        assert!(c.partial_tuples.is_empty());
        assert_eq!(c.covered_rects.len(), 1);
    }

    #[test]
    fn interval_inside_one_block_has_no_canonical() {
        let t = tree_of(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
        // strictly inside the first block
        let q = CInterval::from_interval(Interval::new(1.5, 2.5).unwrap());
        let c = t.canonical(&q);
        assert!(c.covered_ids.is_empty());
        assert!(c.covered_rects.is_empty());
        assert_eq!(c.partial_tuples, vec![1]);
    }

    #[test]
    fn canonical_partition_matches_scan() {
        let mut rng = SmallRng::seed_from_u64(5);
        for alpha in [1usize, 2, 5, 16] {
            let vals: Vec<f64> = (0..97).map(|_| rng.random_range(0..30) as f64).collect();
            let t = tree_of(&vals, alpha);
            for _ in 0..200 {
                let a = rng.random_range(-1..31) as f64;
                let b = rng.random_range(-1..31) as f64;
                let iv = Interval::new(a.min(b), a.max(b)).unwrap();
                let q = CInterval::from_interval(iv);
                let c = t.canonical(&q);
                // disjoint union of covered node tuples + partials = scan
                let mut got: Vec<u32> = c.partial_tuples.clone();
                for &id in &c.covered_ids {
                    got.extend_from_slice(t.node_tuples(id));
                }
                let mut want: Vec<u32> = vals
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| iv.contains(**v))
                    .map(|(i, _)| i as u32)
                    .collect();
                got.sort_unstable();
                let before_dedup = got.len();
                got.dedup();
                assert_eq!(before_dedup, got.len(), "overlapping canonical sets");
                want.sort_unstable();
                assert_eq!(got, want);
                // covered hull selects exactly the covered tuples
                if let Some(r) = c.covered_rects.first() {
                    let hull = r[0];
                    let inside: Vec<u32> = vals
                        .iter()
                        .enumerate()
                        .filter(|(i, v)| hull.contains(CKey::of(**v, *i as u32)))
                        .map(|(i, _)| i as u32)
                        .collect();
                    let mut covered: Vec<u32> = c
                        .covered_ids
                        .iter()
                        .flat_map(|&id| t.node_tuples(id).iter().copied())
                        .collect();
                    covered.sort_unstable();
                    assert_eq!(inside, covered);
                }
            }
        }
    }

    #[test]
    fn multi_tree_partition_matches_scan() {
        let mut rng = SmallRng::seed_from_u64(9);
        for alpha in [1usize, 3, 8] {
            let pts: Vec<(u32, Vec<CKey>)> = (0..80)
                .map(|i| {
                    let x = rng.random_range(0..20) as f64;
                    let y = rng.random_range(0..20) as f64;
                    (i as u32, vec![CKey::of(x, i as u32), CKey::of(y, i as u32)])
                })
                .collect();
            let t = MultiBlockTree::build(2, pts.clone(), alpha);
            for _ in 0..100 {
                let mk = |rng: &mut SmallRng| {
                    let a = rng.random_range(-1..21) as f64;
                    let b = rng.random_range(-1..21) as f64;
                    Interval::new(a.min(b), a.max(b)).unwrap()
                };
                let ivx = mk(&mut rng);
                let ivy = mk(&mut rng);
                let rect = crect_from_intervals(&[ivx, ivy]);
                let c = t.canonical(&rect);
                let mut got = c.partial_tuples.clone();
                // recover covered tuples through the covered rects
                for r in &c.covered_rects {
                    for (id, coords) in &pts {
                        if coords.iter().zip(r).all(|(k, iv)| iv.contains(*k)) {
                            got.push(*id);
                        }
                    }
                }
                got.sort_unstable();
                let before = got.len();
                got.dedup();
                assert_eq!(before, got.len(), "covered rects overlap or repeat partials");
                let mut want: Vec<u32> = pts
                    .iter()
                    .filter(|(_, c)| ivx.contains(c[0].v) && ivy.contains(c[1].v))
                    .map(|(id, _)| *id)
                    .collect();
                want.sort_unstable();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn combo_maps_sum_to_block_sizes() {
        let t = tree_of(&[3.0, 1.0, 2.0, 2.0, 5.0], 2);
        let maps = t.combo_maps(&|id| vec![crate::relation::ValueKey::of(id as f64 % 2.0)]);
        let root = &maps[t.combo_len() - 1];
        let total: u64 = root.values().sum();
        assert_eq!(total, 5);
    }
}
