//! Heavy-light index for (generalized) k-star queries: range counting,
//! (1+ε)-approximate nearest neighbor, and uniform range sampling.
//!
//! Join values are split by frequency: values carried by at least `N/alpha`
//! tuples are heavy (there are at most `alpha` of them), the rest are
//! light. All results produced by light values are materialized, projected
//! to the output attributes with multiplicity weights, and indexed in one
//! range tree. Each heavy value keeps one small per-relation tree instead;
//! its results are counted as a product and never materialized.
//!
//! Also provides the covered-output special case: when the output
//! attributes all come from one relation, a single weighted tree over that
//! relation answers everything in near-linear space.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::ann::AnnTree;
use crate::geom::composite::{CInterval, CRect};
use crate::geom::range_tree::{RangeTree, RtSampler};
use crate::joins::{bind_reduced, build_join_tree, renumber, results_per_root_tuple};
use crate::query::{bind, QueryClass, QuerySpec};
use crate::rect::{euclidean, QueryPoint, Rect};
use crate::relation::{AttributeId, DatabaseInstance, GroupKey, ValueKey};
use crate::star::StarLayout;

/// Which query modes an index is built for. Counting structures are always
/// present; `sample` relies on them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexModes {
    pub ann: bool,
    pub sample: bool,
}

impl IndexModes {
    pub fn count_only() -> IndexModes {
        IndexModes::default()
    }

    pub fn all() -> IndexModes {
        IndexModes {
            ann: true,
            sample: true,
        }
    }
}

/// Where each output coordinate of a heavy-value candidate comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
enum OutSource {
    /// Position within the join-group key.
    Join(usize),
    /// Relation index and dimension within that relation's projected head.
    Head { rel: usize, dim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeavyValue {
    key: GroupKey,
    /// Per relation: weighted tree over the output-projected head values of
    /// the tuples carrying this join value.
    trees: Vec<RangeTree>,
    ann: Vec<Option<AnnTree>>,
}

/// Heavy-light index over a star-shaped query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeavyLightIndex {
    query: QuerySpec,
    layout: StarLayout,
    alpha: u64,
    n: u64,
    modes: IndexModes,
    eps: f64,
    /// Per relation: output attributes of its head group, in head order.
    out_heads: Vec<Vec<AttributeId>>,
    /// Output positions of the join attributes that are in the head.
    join_out: Vec<(usize, usize)>, // (position in output, position in join key)
    out_sources: Vec<OutSource>,
    light_tree: RangeTree,
    light_points: Vec<Vec<f64>>,
    light_ann: Option<AnnTree>,
    heavy: Vec<HeavyValue>,
    /// Bag size of the materialized light results.
    light_bag: u64,
}

impl HeavyLightIndex {
    pub fn build(
        db: &DatabaseInstance,
        q: &QuerySpec,
        t_budget: u64,
        modes: IndexModes,
        eps: Option<f64>,
    ) -> Result<HeavyLightIndex> {
        match q.classify() {
            QueryClass::Star(_) | QueryClass::GeneralizedStar(_) => {}
            other => {
                return Err(Error::WrongClass {
                    expected: "star or generalized star".into(),
                    found: other.to_string(),
                })
            }
        }
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
        let layout = StarLayout::from_query(q, &atoms);
        let alpha = t_budget;
        let n: u64 = atoms.iter().map(|r| r.len() as u64).sum();

        let k = layout.k();
        let out = q.output();
        let out_heads: Vec<Vec<AttributeId>> = layout
            .head_groups
            .iter()
            .map(|g| g.iter().filter(|a| out.contains(a)).cloned().collect())
            .collect();
        let join_out: Vec<(usize, usize)> = layout
            .b_attrs
            .iter()
            .enumerate()
            .filter_map(|(bi, a)| out.iter().position(|o| o == a).map(|oi| (oi, bi)))
            .collect();
        let out_sources: Vec<OutSource> = out
            .iter()
            .map(|a| {
                if let Some(bi) = layout.b_attrs.iter().position(|b| b == a) {
                    OutSource::Join(bi)
                } else {
                    let rel = layout
                        .head_groups
                        .iter()
                        .position(|g| g.contains(a))
                        .expect("output attribute in some head group");
                    let dim = out_heads[rel].iter().position(|h| h == a).unwrap();
                    OutSource::Head { rel, dim }
                }
            })
            .collect();

        // group tuples per join value
        let mut groups: HashMap<GroupKey, Vec<Vec<u32>>> = HashMap::new();
        for (i, rel) in atoms.iter().enumerate() {
            for t in &rel.tuples {
                let slot = groups
                    .entry(layout.b_key(i, rel, t.id))
                    .or_insert_with(|| vec![Vec::new(); k]);
                slot[i].push(t.id);
            }
        }

        // projected fragment positions per relation
        let out_head_positions: Vec<Vec<usize>> = atoms
            .iter()
            .zip(&out_heads)
            .map(|(rel, heads)| heads.iter().map(|a| rel.position(a).unwrap()).collect())
            .collect();

        let mut heavy: Vec<HeavyValue> = Vec::new();
        let mut light_weights: HashMap<Vec<ValueKey>, u64> = HashMap::new();
        let mut light_bag = 0u64;
        let mut sorted_groups: Vec<(GroupKey, Vec<Vec<u32>>)> = groups.into_iter().collect();
        sorted_groups.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, per_rel) in sorted_groups {
            let size: u64 = per_rel.iter().map(|v| v.len() as u64).sum();
            // heavy iff |T_i| >= N/alpha, compared exactly in integers
            if size.saturating_mul(alpha) >= n && n > 0 {
                let mut trees = Vec::with_capacity(k);
                let mut ann = Vec::with_capacity(k);
                for (i, tids) in per_rel.iter().enumerate() {
                    let dims = out_heads[i].len();
                    let mut weights: HashMap<Vec<ValueKey>, u64> = HashMap::new();
                    for &tid in tids {
                        let frag = atoms[i].tuples[tid as usize].key(&out_head_positions[i]);
                        *weights.entry(frag).or_insert(0) += 1;
                    }
                    let rows: Vec<(Vec<f64>, u64)> = sorted_rows(weights);
                    let pts: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.clone()).collect();
                    trees.push(RangeTree::from_values(dims, rows));
                    ann.push(if modes.ann && dims > 0 {
                        Some(AnnTree::build(dims, pts, eps))
                    } else {
                        None
                    });
                }
                heavy.push(HeavyValue { key, trees, ann });
            } else {
                // materialize the light results as projected fragments
                let mut frag_maps: Vec<HashMap<Vec<ValueKey>, u64>> = Vec::with_capacity(k);
                for (i, tids) in per_rel.iter().enumerate() {
                    let mut m: HashMap<Vec<ValueKey>, u64> = HashMap::new();
                    for &tid in tids {
                        let frag = atoms[i].tuples[tid as usize].key(&out_head_positions[i]);
                        *m.entry(frag).or_insert(0) += 1;
                    }
                    frag_maps.push(m);
                }
                let mut bag_product = 1u64;
                for tids in &per_rel {
                    bag_product = bag_product.saturating_mul(tids.len() as u64);
                }
                light_bag += bag_product;
                // assemble output points: join coordinates are fixed
                let mut point = vec![ValueKey::of(0.0); out.len()];
                for &(oi, bi) in &join_out {
                    point[oi] = key[bi];
                }
                accumulate_light(
                    &frag_maps,
                    &out_sources,
                    0,
                    1,
                    &mut point,
                    &mut light_weights,
                );
            }
        }

        let rows = sorted_rows(light_weights);
        let light_points: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.clone()).collect();
        let light_tree = RangeTree::from_values(out.len(), rows);
        let light_ann = if modes.ann && !light_points.is_empty() {
            Some(AnnTree::build(out.len(), light_points.clone(), eps))
        } else {
            None
        };

        let idx = HeavyLightIndex {
            query: q.clone(),
            layout,
            alpha,
            n,
            modes,
            eps,
            out_heads,
            join_out,
            out_sources,
            light_tree,
            light_points,
            light_ann,
            heavy,
            light_bag,
        };
        assert!(idx.heavy.len() as u64 <= alpha, "heavy set exceeds alpha");
        Ok(idx)
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    pub fn modes(&self) -> IndexModes {
        self.modes
    }

    pub fn heavy_count(&self) -> usize {
        self.heavy.len()
    }

    /// Bag size of the materialized light results.
    pub fn light_bag_size(&self) -> u64 {
        self.light_bag
    }

    /// Smallest tuple-set size among heavy values, when any.
    pub fn min_heavy_size(&self) -> Option<u64> {
        self.heavy
            .iter()
            .map(|h| h.trees.iter().map(|t| t.total_weight()).sum())
            .min()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    fn out_crect(&self, r: &Rect) -> CRect {
        self.query
            .output()
            .iter()
            .map(|a| CInterval::from_interval(r.interval_or_full(a)))
            .collect()
    }

    fn head_crect(&self, rel: usize, r: &Rect) -> CRect {
        self.out_heads[rel]
            .iter()
            .map(|a| CInterval::from_interval(r.interval_or_full(a)))
            .collect()
    }

    fn join_passes(&self, key: &GroupKey, r: &Rect) -> bool {
        self.join_out
            .iter()
            .all(|&(oi, bi)| r.interval_or_full(&self.query.output()[oi]).contains(key[bi].value()))
    }

    /// Exact bag count of query results inside `r`.
    pub fn rcq(&self, r: &Rect) -> Result<u64> {
        r.validate_for(&self.query)?;
        let (n1, n2) = self.rcq_split(r);
        Ok(n1 + n2)
    }

    /// Light and heavy contributions separately.
    pub fn rcq_split(&self, r: &Rect) -> (u64, u64) {
        let n1 = self.light_tree.count(&self.out_crect(r));
        let mut n2 = 0u64;
        for hv in &self.heavy {
            if !self.join_passes(&hv.key, r) {
                continue;
            }
            let mut prod = 1u64;
            for (j, tree) in hv.trees.iter().enumerate() {
                prod *= tree.count(&self.head_crect(j, r));
                if prod == 0 {
                    break;
                }
            }
            n2 += prod;
        }
        (n1, n2)
    }

    /// A query result within (1+ε) of the nearest one to `point`.
    pub fn ann(&self, point: &QueryPoint) -> Result<Vec<f64>> {
        if !self.modes.ann {
            return Err(Error::ModeMismatch("ann"));
        }
        point.validate_for(&self.query)?;
        let q = point.coords_for(&self.query);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let consider = |cand: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
            let d = euclidean(&cand, &q);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                *best = Some((d, cand));
            }
        };
        if let Some(ann) = &self.light_ann {
            if !ann.is_empty() {
                let (p, _) = ann.query(&q)?;
                consider(p.to_vec(), &mut best);
            }
        }
        for hv in &self.heavy {
            let mut cand = vec![0.0f64; q.len()];
            let mut ok = true;
            // per-relation approximate answers on the projected heads
            let mut frags: Vec<Option<Vec<f64>>> = vec![None; hv.trees.len()];
            for (oi, src) in self.out_sources.iter().enumerate() {
                match src {
                    OutSource::Join(bi) => cand[oi] = hv.key[*bi].value(),
                    OutSource::Head { rel, dim } => {
                        if frags[*rel].is_none() {
                            let ann = hv.ann[*rel].as_ref().expect("ann tree for output head");
                            let sub_q: Vec<f64> = self.out_heads[*rel]
                                .iter()
                                .map(|a| point.coord(a).unwrap())
                                .collect();
                            match ann.query(&sub_q) {
                                Ok((p, _)) => frags[*rel] = Some(p.to_vec()),
                                Err(_) => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        cand[oi] = frags[*rel].as_ref().unwrap()[*dim];
                    }
                }
            }
            if ok {
                consider(cand, &mut best);
            }
        }
        best.map(|(_, c)| c).ok_or(Error::EmptyResult)
    }

    /// Prepares repeated uniform draws from the results inside `r`.
    pub fn rsq_sampler(&self, r: &Rect) -> Result<HlSampler<'_>> {
        if !self.modes.sample {
            return Err(Error::ModeMismatch("sample"));
        }
        r.validate_for(&self.query)?;
        let light = self.light_tree.sampler(&self.out_crect(r));
        let mut heavy = Vec::new();
        let mut total = light.total_weight();
        for hv in &self.heavy {
            if !self.join_passes(&hv.key, r) {
                continue;
            }
            let samplers: Vec<RtSampler<'_>> = hv
                .trees
                .iter()
                .enumerate()
                .map(|(j, t)| t.sampler(&self.head_crect(j, r)))
                .collect();
            let z: u64 = samplers
                .iter()
                .map(|s| s.total_weight())
                .try_fold(1u64, |acc, w| if w == 0 { None } else { Some(acc * w) })
                .unwrap_or(0);
            if z > 0 {
                total += z;
                heavy.push((hv, samplers, z));
            }
        }
        Ok(HlSampler {
            index: self,
            light,
            heavy,
            total,
        })
    }

    /// One uniform draw from the result multiset inside `r`; `None` when
    /// the rectangle is empty.
    pub fn rsq<R: Rng + ?Sized>(&self, r: &Rect, rng: &mut R) -> Result<Option<Vec<f64>>> {
        Ok(self.rsq_sampler(r)?.draw(rng))
    }

    pub fn stored_entries(&self) -> u64 {
        let mut total = self.light_tree.stored_entries();
        if let Some(a) = &self.light_ann {
            total += a.stored_entries();
        }
        for hv in &self.heavy {
            total += 1; // the stored key
            total += hv.trees.iter().map(|t| t.stored_entries()).sum::<u64>();
            total += hv
                .ann
                .iter()
                .flatten()
                .map(|a| a.stored_entries())
                .sum::<u64>();
        }
        total
    }
}

/// Reusable decomposition for uniform draws from a heavy-light index.
pub struct HlSampler<'a> {
    index: &'a HeavyLightIndex,
    light: RtSampler<'a>,
    heavy: Vec<(&'a HeavyValue, Vec<RtSampler<'a>>, u64)>,
    total: u64,
}

impl HlSampler<'_> {
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if self.total == 0 {
            return None;
        }
        let mut pick = rng.random_range(0..self.total);
        if pick < self.light.total_weight() {
            let idx = self.light.draw(rng).expect("light weight positive");
            return Some(self.index.light_points[self.index.light_tree.point(idx).payload as usize].clone());
        }
        pick -= self.light.total_weight();
        for (hv, samplers, z) in &self.heavy {
            if pick >= *z {
                pick -= z;
                continue;
            }
            // draw one fragment per relation and assemble the output point
            let frags: Vec<Vec<f64>> = samplers
                .iter()
                .zip(&hv.trees)
                .map(|(s, t)| {
                    let idx = s.draw(rng).expect("positive weight");
                    t.point(idx).coords.iter().map(|k| k.v).collect()
                })
                .collect();
            let mut out = vec![0.0f64; self.index.out_sources.len()];
            for (oi, src) in self.index.out_sources.iter().enumerate() {
                match src {
                    OutSource::Join(bi) => out[oi] = hv.key[*bi].value(),
                    OutSource::Head { rel, dim } => out[oi] = frags[*rel][*dim],
                }
            }
            return Some(out);
        }
        unreachable!("sampler weights inconsistent")
    }
}

/// Near-linear index for queries whose output attributes all come from one
/// relation: a weighted tree over that relation's projection, each tuple
/// weighted by the number of join results it appears in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoveredOutputIndex {
    query: QuerySpec,
    tree: RangeTree,
    points: Vec<Vec<f64>>,
    ann: Option<AnnTree>,
}

impl CoveredOutputIndex {
    pub fn build(
        db: &DatabaseInstance,
        q: &QuerySpec,
        atom: usize,
        modes: IndexModes,
        eps: Option<f64>,
    ) -> Result<CoveredOutputIndex> {
        let out = q.output();
        let atom_attrs = &q.atoms()[atom].attrs;
        if !out.iter().all(|a| atom_attrs.contains(a)) {
            return Err(Error::NotCovered);
        }
        let eps = match (modes.ann, eps) {
            (true, Some(e)) if e > 0.0 && e <= 1.0 => e,
            (true, _) => return Err(Error::ModeMismatch("ann mode requires eps in (0, 1]")),
            (false, e) => e.unwrap_or(1.0),
        };
        let tree_shape = build_join_tree(q)?;
        let atoms = renumber(crate::joins::reduce_atoms(&bind(db, q)?, &tree_shape));
        let counts = results_per_root_tuple(&atoms, &tree_shape, atom);
        let rel = &atoms[atom];
        let out_positions: Vec<usize> = out.iter().map(|a| rel.position(a).unwrap()).collect();
        let mut weights: HashMap<Vec<ValueKey>, u64> = HashMap::new();
        for t in &rel.tuples {
            let w = counts[t.id as usize];
            if w > 0 {
                *weights.entry(t.key(&out_positions)).or_insert(0) += w;
            }
        }
        let rows = sorted_rows(weights);
        let points: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.clone()).collect();
        let tree = RangeTree::from_values(out.len(), rows);
        let ann = if modes.ann && !points.is_empty() {
            Some(AnnTree::build(out.len(), points.clone(), eps))
        } else {
            None
        };
        Ok(CoveredOutputIndex {
            query: q.clone(),
            tree,
            points,
            ann,
        })
    }

    /// Total weight stored; equals the bag size of the query result.
    pub fn total_weight(&self) -> u64 {
        self.tree.total_weight()
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

    pub fn ann(&self, point: &QueryPoint) -> Result<Vec<f64>> {
        let Some(ann) = &self.ann else {
            return Err(Error::ModeMismatch("ann"));
        };
        point.validate_for(&self.query)?;
        let (p, _) = ann.query(&point.coords_for(&self.query))?;
        Ok(p.to_vec())
    }

    pub fn stored_entries(&self) -> u64 {
        self.tree.stored_entries() + self.ann.as_ref().map_or(0, |a| a.stored_entries())
    }
}

fn sorted_rows(weights: HashMap<Vec<ValueKey>, u64>) -> Vec<(Vec<f64>, u64)> {
    let mut entries: Vec<(Vec<ValueKey>, u64)> = weights.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
        .into_iter()
        .map(|(keys, w)| (keys.iter().map(|k| k.value()).collect(), w))
        .collect()
}

fn accumulate_light(
    frag_maps: &[HashMap<Vec<ValueKey>, u64>],
    out_sources: &[OutSource],
    rel: usize,
    weight: u64,
    point: &mut Vec<ValueKey>,
    out: &mut HashMap<Vec<ValueKey>, u64>,
) {
    if rel == frag_maps.len() {
        *out.entry(point.clone()).or_insert(0) += weight;
        return;
    }
    for (frag, w) in &frag_maps[rel] {
        for (oi, src) in out_sources.iter().enumerate() {
            if let OutSource::Head { rel: r, dim } = src {
                if *r == rel {
                    point[oi] = frag[*dim];
                }
            }
        }
        accumulate_light(frag_maps, out_sources, rel + 1, weight * w, point, out);
    }
}


#[cfg(test)]
mod multi_attr_tests {
    use super::*;
    use crate::oracle::{brute_force_rcq, DEFAULT_BUDGET};
    use crate::rect::Interval;
    use crate::relation::Relation;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn relation_with_no_output_attributes() {
        // R2 contributes only multiplicity: its head tree is 0-dimensional
        let q = QuerySpec::parse_text("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1\n").unwrap();
        let mut rng = SmallRng::seed_from_u64(127);
        let mk = |name: &str, a: &str, rng: &mut SmallRng| {
            Relation::new(
                name,
                vec![a.into(), "B".into()],
                (0..30)
                    .map(|_| vec![rng.random_range(0..8) as f64, rng.random_range(0..4) as f64])
                    .collect(),
            )
            .unwrap()
        };
        let db =
            DatabaseInstance::new(vec![mk("R1", "A1", &mut rng), mk("R2", "A2", &mut rng)]).unwrap();
        for t in [1u64, 6, 60] {
            let idx = HeavyLightIndex::build(&db, &q, t, IndexModes::count_only(), None).unwrap();
            for _ in 0..30 {
                let x = rng.random_range(0..9) as f64;
                let y = rng.random_range(0..9) as f64;
                let r = Rect::new(vec![(
                    "A1".into(),
                    Interval::new(x.min(y), x.max(y)).unwrap(),
                )])
                .unwrap();
                let want = brute_force_rcq(&q, &db, &r, DEFAULT_BUDGET).unwrap();
                assert_eq!(idx.rcq(&r).unwrap(), want, "T={t}");
            }
        }
    }

    #[test]
    fn multi_attribute_join_group_with_partial_output() {
        // two join attributes, one of them in the head
        let q = QuerySpec::parse_text("R1(A1,Bx,By)\nR2(A2,Bx,By)\nOUTPUT: A1,Bx,A2\n").unwrap();
        assert_eq!(q.classify(), crate::query::QueryClass::GeneralizedStar(2));
        let mut rng = SmallRng::seed_from_u64(109);
        let mk = |name: &str, a: &str, rng: &mut SmallRng| {
            Relation::new(
                name,
                vec![a.into(), "Bx".into(), "By".into()],
                (0..35)
                    .map(|_| {
                        vec![
                            rng.random_range(0..9) as f64,
                            rng.random_range(0..3) as f64,
                            rng.random_range(0..3) as f64,
                        ]
                    })
                    .collect(),
            )
            .unwrap()
        };
        let db = DatabaseInstance::new(vec![mk("R1", "A1", &mut rng), mk("R2", "A2", &mut rng)]).unwrap();
        for t in [1u64, 8, 70] {
            let idx = HeavyLightIndex::build(&db, &q, t, IndexModes::count_only(), None).unwrap();
            for _ in 0..40 {
                let r = Rect::new(
                    q.output()
                        .iter()
                        .map(|a| {
                            let x = rng.random_range(0..10) as f64;
                            let y = rng.random_range(0..10) as f64;
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
