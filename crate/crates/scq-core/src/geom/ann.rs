//! (1+ε)-approximate nearest neighbor over a static point set.
//!
//! Balanced spatial subdivision (median split on the widest box dimension,
//! buckets of at most 16 points) searched best-first. A subtree is pruned
//! when the minimum distance from the query to its box exceeds
//! `best / (1+ε)`; whatever survives is scanned exactly, so the returned
//! point is always within the (1+ε) factor of the true nearest distance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rect::euclidean;

const BUCKET: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(u32, u32)>,
}

/// Spatial partition tree answering (1+ε)-approximate nearest neighbor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnTree {
    dims: usize,
    eps: f64,
    points: Vec<Vec<f64>>,
    payloads: Vec<u32>,
    nodes: Vec<AnnNode>,
    root: Option<u32>,
}

impl AnnTree {
    /// Builds the tree; `eps` must lie in `(0, 1]`.
    pub fn build(dims: usize, points: Vec<Vec<f64>>, eps: f64) -> AnnTree {
        let payloads = (0..points.len() as u32).collect();
        AnnTree::build_with_payloads(dims, points, payloads, eps)
    }

    pub fn build_with_payloads(
        dims: usize,
        points: Vec<Vec<f64>>,
        payloads: Vec<u32>,
        eps: f64,
    ) -> AnnTree {
        assert!(eps > 0.0 && eps <= 1.0, "eps must be in (0, 1]");
        assert!(points.iter().all(|p| p.len() == dims));
        assert_eq!(points.len(), payloads.len());
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = if points.is_empty() {
            None
        } else {
            let n = points.len();
            Some(build_node(&points, &mut order, 0, n, dims, &mut nodes))
        };
        // reorder points to match the recursive layout
        let points_ord: Vec<Vec<f64>> = order.iter().map(|&i| points[i as usize].clone()).collect();
        let payloads_ord: Vec<u32> = order.iter().map(|&i| payloads[i as usize]).collect();
        AnnTree {
            dims,
            eps,
            points: points_ord,
            payloads: payloads_ord,
            nodes,
            root,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn stored_entries(&self) -> u64 {
        (self.nodes.len() + self.points.len()) as u64
    }

    /// Returns `(coords, payload)` of a point within `(1+eps)` of the true
    /// nearest distance to `q`.
    pub fn query(&self, q: &[f64]) -> Result<(&[f64], u32)> {
        assert_eq!(q.len(), self.dims, "query dimension mismatch");
        let Some(root) = self.root else {
            return Err(Error::EmptyResult);
        };
        if self.dims == 0 {
            return Ok((&self.points[0], self.payloads[0]));
        }
        let mut best_dist = f64::INFINITY;
        let mut best_idx = 0usize;
        let mut heap: BinaryHeap<Reverse<(OrdF64, u32)>> = BinaryHeap::new();
        heap.push(Reverse((OrdF64(self.min_dist(root, q)), root)));
        while let Some(Reverse((OrdF64(dist), idx))) = heap.pop() {
            if dist > best_dist / (1.0 + self.eps) {
                break;
            }
            let node = &self.nodes[idx as usize];
            match node.children {
                Some((l, r)) => {
                    heap.push(Reverse((OrdF64(self.min_dist(l, q)), l)));
                    heap.push(Reverse((OrdF64(self.min_dist(r, q)), r)));
                }
                None => {
                    for i in node.start..node.end {
                        let d = euclidean(&self.points[i], q);
                        if d < best_dist {
                            best_dist = d;
                            best_idx = i;
                        }
                    }
                }
            }
        }
        Ok((&self.points[best_idx], self.payloads[best_idx]))
    }

    fn min_dist(&self, idx: u32, q: &[f64]) -> f64 {
        let node = &self.nodes[idx as usize];
        let mut sum = 0.0;
        for d in 0..self.dims {
            let gap = if q[d] < node.lo[d] {
                node.lo[d] - q[d]
            } else if q[d] > node.hi[d] {
                q[d] - node.hi[d]
            } else {
                0.0
            };
            sum += gap * gap;
        }
        sum.sqrt()
    }
}

#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn build_node(
    points: &[Vec<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    dims: usize,
    nodes: &mut Vec<AnnNode>,
) -> u32 {
    let slice = &order[start..end];
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for &i in slice.iter() {
        for d in 0..dims {
            lo[d] = lo[d].min(points[i as usize][d]);
            hi[d] = hi[d].max(points[i as usize][d]);
        }
    }
    let len = end - start;
    let children = if len > BUCKET && dims > 0 {
        // split the widest dimension at the median
        let dim = (0..dims)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = len / 2;
        order[start..end]
            .select_nth_unstable_by(mid, |&a, &b| points[a as usize][dim].total_cmp(&points[b as usize][dim]));
        let l = build_node(points, order, start, start + mid, dims, nodes);
        let r = build_node(points, order, start + mid, end, dims, nodes);
        Some((l, r))
    } else {
        None
    };
    nodes.push(AnnNode {
        lo,
        hi,
        start,
        end,
        children,
    });
    (nodes.len() - 1) as u32
}
