//! Weighted multi-dimensional range counting and uniform sampling over
//! composite-key points.
//!
//! The tree is a balanced spatial subdivision: each node splits its point
//! set at the median of one dimension (cycling through dimensions), stores
//! the per-dimension hull and subtree weight, and keeps small buckets at the
//! leaves. Counting decomposes a query rectangle into disjoint canonical
//! nodes plus boundary points; sampling draws from the same decomposition
//! with probability proportional to weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::composite::{CInterval, CKey, CRect};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RtNode {
    /// Per-dimension composite hull of the points below this node.
    lo: Vec<CKey>,
    hi: Vec<CKey>,
    weight: u64,
    /// Range into the reordered point array.
    start: usize,
    end: usize,
    /// Child node indices; `None` for leaves.
    children: Option<(u32, u32)>,
}

/// One stored point: composite coordinates, weight, and a caller payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RtPoint {
    pub coords: Vec<CKey>,
    pub weight: u64,
    pub payload: u32,
}

/// Weighted range tree over points in composite-key space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeTree {
    dims: usize,
    points: Vec<RtPoint>,
    nodes: Vec<RtNode>,
    root: Option<u32>,
    total: u64,
}

impl RangeTree {
    /// Builds a tree over `(coords, weight, payload)` triples. Zero-weight
    /// points are kept but never sampled. `dims` may be zero, in which case
    /// the tree only carries total weight.
    pub fn build(dims: usize, mut points: Vec<RtPoint>) -> RangeTree {
        assert!(points.iter().all(|p| p.coords.len() == dims));
        let total = points.iter().map(|p| p.weight).sum();
        let mut nodes = Vec::new();
        let n = points.len();
        let root = if n == 0 {
            None
        } else {
            Some(build_node(&mut points, 0, n, 0, dims, &mut nodes))
        };
        RangeTree {
            dims,
            points,
            nodes,
            root,
            total,
        }
    }

    /// Convenience constructor from plain per-dimension values; composite
    /// ids are the point ordinals.
    pub fn from_values(dims: usize, rows: Vec<(Vec<f64>, u64)>) -> RangeTree {
        let points = rows
            .into_iter()
            .enumerate()
            .map(|(i, (vals, w))| RtPoint {
                coords: vals.iter().map(|&v| CKey::of(v, i as u32)).collect(),
                weight: w,
                payload: i as u32,
            })
            .collect();
        RangeTree::build(dims, points)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> &RtPoint {
        &self.points[idx]
    }

    pub fn stored_entries(&self) -> u64 {
        (self.nodes.len() + self.points.len()) as u64
    }

    /// Total weight of the points inside the composite rectangle.
    pub fn count(&self, rect: &CRect) -> u64 {
        assert_eq!(rect.len(), self.dims, "rectangle dimension mismatch");
        if rect.iter().any(|iv| iv.is_empty()) {
            return 0;
        }
        let Some(root) = self.root else { return 0 };
        if self.dims == 0 {
            return self.total;
        }
        self.count_node(root, rect)
    }

    fn node_box_in(&self, node: &RtNode, rect: &CRect) -> BoxRelation {
        let mut inside = true;
        for d in 0..self.dims {
            let hull = CInterval::new(node.lo[d], node.hi[d]);
            if !rect[d].intersects(&hull) {
                return BoxRelation::Disjoint;
            }
            if !rect[d].contains_interval(&hull) {
                inside = false;
            }
        }
        if inside {
            BoxRelation::Inside
        } else {
            BoxRelation::Partial
        }
    }

    fn count_node(&self, idx: u32, rect: &CRect) -> u64 {
        let node = &self.nodes[idx as usize];
        match self.node_box_in(node, rect) {
            BoxRelation::Disjoint => 0,
            BoxRelation::Inside => node.weight,
            BoxRelation::Partial => match node.children {
                Some((l, r)) => self.count_node(l, rect) + self.count_node(r, rect),
                None => self.points[node.start..node.end]
                    .iter()
                    .filter(|p| point_in(&p.coords, rect))
                    .map(|p| p.weight)
                    .sum(),
            },
        }
    }

    /// Prepares repeated weighted-uniform draws from the points inside
    /// `rect`. The decomposition is computed once.
    pub fn sampler(&self, rect: &CRect) -> RtSampler<'_> {
        assert_eq!(rect.len(), self.dims, "rectangle dimension mismatch");
        let mut parts = Vec::new();
        let mut total = 0u64;
        if self.dims == 0 {
            for (i, p) in self.points.iter().enumerate() {
                if p.weight > 0 {
                    parts.push(SamplePart::Point(i as u32, p.weight));
                    total += p.weight;
                }
            }
        } else if let Some(root) = self.root {
            if rect.iter().all(|iv| !iv.is_empty()) {
                self.decompose(root, rect, &mut parts, &mut total);
            }
        }
        RtSampler {
            tree: self,
            parts,
            total,
        }
    }

    fn decompose(&self, idx: u32, rect: &CRect, out: &mut Vec<SamplePart>, total: &mut u64) {
        let node = &self.nodes[idx as usize];
        match self.node_box_in(node, rect) {
            BoxRelation::Disjoint => {}
            BoxRelation::Inside => {
                if node.weight > 0 {
                    out.push(SamplePart::Node(idx, node.weight));
                    *total += node.weight;
                }
            }
            BoxRelation::Partial => match node.children {
                Some((l, r)) => {
                    self.decompose(l, rect, out, total);
                    self.decompose(r, rect, out, total);
                }
                None => {
                    for i in node.start..node.end {
                        let p = &self.points[i];
                        if p.weight > 0 && point_in(&p.coords, rect) {
                            out.push(SamplePart::Point(i as u32, p.weight));
                            *total += p.weight;
                        }
                    }
                }
            },
        }
    }

    /// One weighted-uniform draw from the points in `rect`; `None` when the
    /// rectangle holds no weight.
    pub fn sample<R: Rng + ?Sized>(&self, rect: &CRect, rng: &mut R) -> Option<usize> {
        self.sampler(rect).draw(rng)
    }

    fn descend<R: Rng + ?Sized>(&self, idx: u32, rng: &mut R) -> usize {
        let mut node = &self.nodes[idx as usize];
        loop {
            match node.children {
                Some((l, r)) => {
                    let wl = self.nodes[l as usize].weight;
                    let wr = self.nodes[r as usize].weight;
                    let pick = rng.random_range(0..wl + wr);
                    node = if pick < wl {
                        &self.nodes[l as usize]
                    } else {
                        &self.nodes[r as usize]
                    };
                }
                None => {
                    let slice = &self.points[node.start..node.end];
                    let total: u64 = slice.iter().map(|p| p.weight).sum();
                    let mut pick = rng.random_range(0..total);
                    for (i, p) in slice.iter().enumerate() {
                        if pick < p.weight {
                            return node.start + i;
                        }
                        pick -= p.weight;
                    }
                    unreachable!("weights changed during sampling");
                }
            }
        }
    }
}

/// Reusable decomposition of one rectangle for repeated draws.
pub struct RtSampler<'a> {
    tree: &'a RangeTree,
    parts: Vec<SamplePart>,
    total: u64,
}

enum SamplePart {
    Node(u32, u64),
    Point(u32, u64),
}

impl RtSampler<'_> {
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    /// Index of the drawn point in the tree's point array.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.total == 0 {
            return None;
        }
        let mut pick = rng.random_range(0..self.total);
        for part in &self.parts {
            let w = match part {
                SamplePart::Node(_, w) | SamplePart::Point(_, w) => *w,
            };
            if pick < w {
                return Some(match part {
                    SamplePart::Node(idx, _) => self.tree.descend(*idx, rng),
                    SamplePart::Point(i, _) => *i as usize,
                });
            }
            pick -= w;
        }
        unreachable!("sampler weights inconsistent");
    }
}

#[derive(PartialEq)]
enum BoxRelation {
    Disjoint,
    Inside,
    Partial,
}

fn point_in(coords: &[CKey], rect: &CRect) -> bool {
    coords.iter().zip(rect).all(|(k, iv)| iv.contains(*k))
}

fn build_node(
    points: &mut [RtPoint],
    start: usize,
    end: usize,
    depth: usize,
    dims: usize,
    nodes: &mut Vec<RtNode>,
) -> u32 {
    let len = end - start;
    let children = if len > LEAF_SIZE && dims > 0 {
        let dim = depth % dims;
        let mid = len / 2;
        points[start..end].select_nth_unstable_by(mid, |a, b| a.coords[dim].cmp(&b.coords[dim]));
        let l = build_node(points, start, start + mid, depth + 1, dims, nodes);
        let r = build_node(points, start + mid, end, depth + 1, dims, nodes);
        Some((l, r))
    } else {
        None
    };
    let slice = &points[start..end];
    let mut lo = vec![CKey::new(f64::INFINITY, i64::MAX); dims];
    let mut hi = vec![CKey::new(f64::NEG_INFINITY, i64::MIN); dims];
    for p in slice {
        for d in 0..dims {
            if p.coords[d] < lo[d] {
                lo[d] = p.coords[d];
            }
            if p.coords[d] > hi[d] {
                hi[d] = p.coords[d];
            }
        }
    }
    nodes.push(RtNode {
        lo,
        hi,
        weight: slice.iter().map(|p| p.weight).sum(),
        start,
        end,
        children,
    });
    (nodes.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::composite::crect_from_intervals;
    use crate::rect::Interval;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn rand_points(n: usize, dims: usize, rng: &mut SmallRng) -> Vec<(Vec<f64>, u64)> {
        (0..n)
            .map(|_| {
                (
                    (0..dims).map(|_| rng.random_range(0..50) as f64).collect(),
                    1,
                )
            })
            .collect()
    }

    fn linear_count(rows: &[(Vec<f64>, u64)], ivs: &[Interval]) -> u64 {
        rows.iter()
            .filter(|(vals, _)| vals.iter().zip(ivs).all(|(v, iv)| iv.contains(*v)))
            .map(|(_, w)| w)
            .sum()
    }

    #[test]
    fn unit_weights_total() {
        let t = RangeTree::from_values(2, vec![
            (vec![0.0, 0.0], 1),
            (vec![1.0, 1.0], 1),
            (vec![2.0, 2.0], 1),
        ]);
        assert_eq!(t.total_weight(), 3);
        let full = crect_from_intervals(&[Interval::full(), Interval::full()]);
        assert_eq!(t.count(&full), 3);
    }

    #[test]
    fn duplicate_coordinates_both_stored() {
        let t = RangeTree::from_values(1, vec![(vec![5.0], 1), (vec![5.0], 1)]);
        assert_eq!(t.len(), 2);
        let r = crect_from_intervals(&[Interval::new(5.0, 5.0).unwrap()]);
        assert_eq!(t.count(&r), 2);
    }

    #[test]
    fn counts_match_linear_scan() {
        let mut rng = SmallRng::seed_from_u64(42);
        for dims in [1usize, 2, 3] {
            let rows = rand_points(1000, dims, &mut rng);
            let t = RangeTree::from_values(dims, rows.clone());
            for _ in 0..200 {
                let ivs: Vec<Interval> = (0..dims)
                    .map(|_| {
                        let a = rng.random_range(0..50) as f64;
                        let b = rng.random_range(0..50) as f64;
                        Interval::new(a.min(b), a.max(b)).unwrap()
                    })
                    .collect();
                assert_eq!(
                    t.count(&crect_from_intervals(&ivs)),
                    linear_count(&rows, &ivs),
                );
            }
        }
    }

    #[test]
    fn empty_rect_counts_zero() {
        let t = RangeTree::from_values(1, vec![(vec![1.0], 1)]);
        let r = vec![CInterval::empty()];
        assert_eq!(t.count(&r), 0);
        assert!(t.sample(&r, &mut SmallRng::seed_from_u64(1)).is_none());
    }

    #[test]
    fn sample_single_point_rect() {
        let t = RangeTree::from_values(1, vec![(vec![1.0], 1), (vec![5.0], 1)]);
        let r = crect_from_intervals(&[Interval::new(4.0, 6.0).unwrap()]);
        let mut rng = SmallRng::seed_from_u64(3);
        for _ in 0..10 {
            let idx = t.sample(&r, &mut rng).unwrap();
            assert_eq!(t.point(idx).coords[0].v, 5.0);
        }
    }

    #[test]
    fn sample_marginals_match_weights() {
        // 10 unit-weight points; 20k draws within ±0.02 of 0.1 each
        let rows: Vec<(Vec<f64>, u64)> = (0..10).map(|i| (vec![i as f64], 1)).collect();
        let t = RangeTree::from_values(1, rows);
        let r = crect_from_intervals(&[Interval::full()]);
        let sampler = t.sampler(&r);
        let mut rng = SmallRng::seed_from_u64(7);
        let mut freq = vec![0u64; 10];
        let draws = 20_000;
        for _ in 0..draws {
            let idx = sampler.draw(&mut rng).unwrap();
            freq[t.point(idx).payload as usize] += 1;
        }
        for f in freq {
            let p = f as f64 / draws as f64;
            assert!((p - 0.1).abs() <= 0.02, "frequency {p} too far from 0.1");
        }
    }

    #[test]
    fn weighted_sampling_respects_weights() {
        let t = RangeTree::from_values(1, vec![(vec![0.0], 3), (vec![1.0], 1)]);
        let r = crect_from_intervals(&[Interval::full()]);
        let sampler = t.sampler(&r);
        let mut rng = SmallRng::seed_from_u64(11);
        let mut heavy = 0;
        for _ in 0..20_000 {
            if t.point(sampler.draw(&mut rng).unwrap()).payload == 0 {
                heavy += 1;
            }
        }
        let p = heavy as f64 / 20_000.0;
        assert!((p - 0.75).abs() < 0.02, "weighted share {p} too far from 0.75");
    }

    #[test]
    fn zero_dim_tree_counts_total() {
        let t = RangeTree::build(
            0,
            vec![RtPoint {
                coords: vec![],
                weight: 4,
                payload: 0,
            }],
        );
        assert_eq!(t.count(&vec![]), 4);
    }
}
