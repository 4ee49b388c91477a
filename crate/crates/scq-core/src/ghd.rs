//! Reduction of general conjunctive queries to hierarchical ones through a
//! user-supplied generalized hypertree decomposition.
//!
//! Each bag's atoms are joined and materialized into a fresh relation; the
//! query over the materialized relations must be hierarchical and carries
//! the same result multiset as the original query, so the hierarchical
//! index applies downstream. The decomposition is validated (coverage,
//! connectivity, hierarchical shape) but never optimized: computing an
//! optimal-width decomposition is out of scope.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joins::hash_join;
use crate::query::{bind, Atom, QuerySpec};
use crate::relation::{AttributeId, DatabaseInstance, Relation};

/// One bag of a decomposition: an attribute label and the atoms it covers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bag {
    pub id: usize,
    pub parent: Option<usize>,
    pub attrs: Vec<AttributeId>,
    pub atoms: Vec<String>,
}

/// A user-supplied generalized hypertree decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhdSpec {
    pub bags: Vec<Bag>,
}

/// Per-bag materialization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhdReport {
    /// `(bag id, materialized tuple count, size exponent log_N |bag|)`.
    pub bags: Vec<(usize, u64, f64)>,
}

impl GhdSpec {
    /// Parses the plain-text format: one bag per line as
    /// `BAG <id> <parent> attrs=<A,B,...> atoms=<R1,R2,...>`, with `-` as
    /// the root's parent.
    pub fn parse_text(text: &str) -> Result<GhdSpec> {
        let mut bags = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::InvalidGhd(format!("line {}: {msg}", no + 1));
            let mut parts = line.split_whitespace();
            if parts.next() != Some("BAG") {
                return Err(err("expected BAG"));
            }
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("missing bag id"))?;
            let parent = match parts.next() {
                Some("-") => None,
                Some(s) => Some(s.parse::<usize>().map_err(|_| err("bad parent id"))?),
                None => return Err(err("missing parent")),
            };
            let mut attrs = Vec::new();
            let mut atoms = Vec::new();
            let unbrace = |s: &str| -> String {
                s.trim().trim_start_matches('{').trim_end_matches('}').to_owned()
            };
            for field in parts {
                // the attribute label may be written attrs=, lambda=, or λ=,
                // with or without braces
                if let Some(list) = field
                    .strip_prefix("attrs=")
                    .or_else(|| field.strip_prefix("lambda="))
                    .or_else(|| field.strip_prefix("λ="))
                {
                    attrs = unbrace(list)
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(AttributeId::from)
                        .collect();
                } else if let Some(list) = field.strip_prefix("atoms=") {
                    atoms = unbrace(list)
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect();
                } else {
                    return Err(err("unknown field"));
                }
            }
            bags.push(Bag {
                id,
                parent,
                attrs,
                atoms,
            });
        }
        if bags.is_empty() {
            return Err(Error::InvalidGhd("no bags".into()));
        }
        Ok(GhdSpec { bags })
    }

    pub fn parse_file(path: impl AsRef<Path>) -> Result<GhdSpec> {
        GhdSpec::parse_text(&std::fs::read_to_string(path)?)
    }

    fn bag_index(&self, id: usize) -> Result<usize> {
        self.bags
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::InvalidGhd(format!("unknown bag id {id}")))
    }

    /// Checks tree shape, atom coverage, and attribute connectivity
    /// against the query.
    pub fn validate(&self, q: &QuerySpec) -> Result<()> {
        // tree shape: unique ids, exactly one root, acyclic parent links
        let mut seen = HashSet::new();
        for b in &self.bags {
            if !seen.insert(b.id) {
                return Err(Error::InvalidGhd(format!("duplicate bag id {}", b.id)));
            }
        }
        let roots: Vec<&Bag> = self.bags.iter().filter(|b| b.parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidGhd(format!("{} roots, expected 1", roots.len())));
        }
        for b in &self.bags {
            if let Some(p) = b.parent {
                let mut cur = Some(self.bag_index(p)?);
                let mut hops = 0;
                while let Some(c) = cur {
                    if self.bags[c].id == b.id {
                        return Err(Error::InvalidGhd("parent cycle".into()));
                    }
                    cur = match self.bags[c].parent {
                        Some(pp) => Some(self.bag_index(pp)?),
                        None => None,
                    };
                    hops += 1;
                    if hops > self.bags.len() {
                        return Err(Error::InvalidGhd("parent cycle".into()));
                    }
                }
            }
        }
        // coverage: every query atom in exactly one bag, attrs within label
        let mut assigned: HashMap<&str, usize> = HashMap::new();
        for b in &self.bags {
            for name in &b.atoms {
                if assigned.insert(name.as_str(), b.id).is_some() {
                    return Err(Error::InvalidGhd(format!("atom {name} assigned to two bags")));
                }
            }
        }
        for atom in q.atoms() {
            let Some(&bag_id) = assigned.get(atom.relation.as_str()) else {
                return Err(Error::InvalidGhd(format!("atom {} not covered", atom.relation)));
            };
            let bag = &self.bags[self.bag_index(bag_id)?];
            if let Some(a) = atom.attrs.iter().find(|a| !bag.attrs.contains(a)) {
                return Err(Error::InvalidGhd(format!(
                    "attribute {a} of atom {} outside bag {bag_id}",
                    atom.relation
                )));
            }
        }
        // bag labels must be grounded in their atoms
        for b in &self.bags {
            for a in &b.attrs {
                let grounded = q
                    .atoms()
                    .iter()
                    .any(|atom| b.atoms.contains(&atom.relation) && atom.attrs.contains(a));
                if !grounded {
                    return Err(Error::InvalidGhd(format!(
                        "attribute {a} of bag {} not bound by its atoms",
                        b.id
                    )));
                }
            }
        }
        // connectivity: bags containing each attribute form a subtree
        for a in q.all_attrs() {
            let holders: HashSet<usize> = self
                .bags
                .iter()
                .filter(|b| b.attrs.contains(a))
                .map(|b| b.id)
                .collect();
            if holders.is_empty() {
                continue;
            }
            // walking up from each holder must reach another holder or be
            // the unique top of the holder set
            let mut tops = 0;
            for &h in &holders {
                let bag = &self.bags[self.bag_index(h)?];
                match bag.parent {
                    Some(p) if holders.contains(&p) => {}
                    _ => tops += 1,
                }
            }
            if tops != 1 {
                return Err(Error::InvalidGhd(format!(
                    "attribute {a} spans a disconnected bag set"
                )));
            }
        }
        Ok(())
    }

    /// Materializes each bag's internal join (as a multiset, so bag
    /// semantics is preserved) and returns the induced hierarchical query,
    /// its database, and per-bag statistics.
    pub fn materialize(
        &self,
        db: &DatabaseInstance,
        q: &QuerySpec,
        budget: u64,
    ) -> Result<(QuerySpec, DatabaseInstance, GhdReport)> {
        self.validate(q)?;
        let atoms = bind(db, q)?;
        let n = db.n().max(2);
        let mut relations = Vec::new();
        let mut new_atoms = Vec::new();
        let mut report = Vec::new();
        for b in &self.bags {
            let members: Vec<Relation> = q
                .atoms()
                .iter()
                .enumerate()
                .filter(|(_, a)| b.atoms.contains(&a.relation))
                .map(|(i, _)| atoms[i].clone())
                .collect();
            if members.is_empty() {
                return Err(Error::InvalidGhd(format!("bag {} covers no atom", b.id)));
            }
            let rows = hash_join(&members, &b.attrs, &HashMap::new(), budget)?;
            let name = format!("bag{}", b.id);
            let size = rows.len() as u64;
            let exponent = if size > 0 {
                (size as f64).ln() / (n as f64).ln()
            } else {
                0.0
            };
            report.push((b.id, size, exponent));
            relations.push(Relation::new(name.clone(), b.attrs.clone(), rows)?);
            new_atoms.push(Atom {
                relation: name,
                attrs: b.attrs.clone(),
            });
        }
        let induced = QuerySpec::new(new_atoms, q.output().to_vec())?;
        if !induced.is_hierarchical() {
            return Err(Error::NotHierarchicalDecomposition);
        }
        Ok((
            induced,
            DatabaseInstance::new(relations)?,
            GhdReport { bags: report },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heavy_light::IndexModes;
    use crate::hier::HierIndex;
    use crate::oracle::{brute_force_rcq, DEFAULT_BUDGET};
    use crate::rect::{Interval, Rect};
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn triangle() -> QuerySpec {
        QuerySpec::parse_text("R1(A,B)\nR2(B,C)\nR3(A,C)\nOUTPUT: A,B,C\n").unwrap()
    }

    fn triangle_ghd() -> GhdSpec {
        GhdSpec::parse_text("BAG 0 - attrs=A,B,C atoms=R1,R2,R3\n").unwrap()
    }

    fn random_graph_db(rng: &mut SmallRng, edges: usize, nodes: u64) -> DatabaseInstance {
        let mk = |name: &str, a: &str, b: &str, rng: &mut SmallRng| {
            Relation::new(
                name,
                vec![a.into(), b.into()],
                (0..edges)
                    .map(|_| vec![rng.random_range(0..nodes) as f64, rng.random_range(0..nodes) as f64])
                    .collect(),
            )
            .unwrap()
        };
        DatabaseInstance::new(vec![
            mk("R1", "A", "B", rng),
            mk("R2", "B", "C", rng),
            mk("R3", "A", "C", rng),
        ])
        .unwrap()
    }

    #[test]
    fn parse_round_trip() {
        let g = GhdSpec::parse_text("# comment\nBAG 0 - attrs=A,B,C atoms=R1,R2\nBAG 1 0 attrs=C,D atoms=R3\n")
            .unwrap();
        assert_eq!(g.bags.len(), 2);
        assert_eq!(g.bags[1].parent, Some(0));
        // braced lambda spelling is accepted too
        let g2 = GhdSpec::parse_text("BAG 0 - λ={A,B,C} atoms={R1,R2,R3}\n").unwrap();
        assert_eq!(g2.bags[0].attrs.len(), 3);
        assert_eq!(g2.bags[0].atoms, vec!["R1", "R2", "R3"]);
    }

    #[test]
    fn triangle_single_bag_counts_match_oracle() {
        let mut rng = SmallRng::seed_from_u64(401);
        let q = triangle();
        let g = triangle_ghd();
        for _ in 0..10 {
            let db = random_graph_db(&mut rng, 30, 8);
            let (hq, hdb, report) = g.materialize(&db, &q, DEFAULT_BUDGET).unwrap();
            assert_eq!(hq.classify(), crate::query::QueryClass::Hierarchical);
            assert_eq!(report.bags.len(), 1);
            let idx = HierIndex::build(&hdb, &hq, hdb.n().max(1), Some(0), IndexModes::count_only(), None)
                .unwrap();
            for _ in 0..20 {
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
                assert_eq!(idx.rcq(&r).unwrap(), want);
            }
        }
    }

    #[test]
    fn duplicate_tuples_preserved_through_bags() {
        // a duplicate edge must double the bag count
        let q = triangle();
        let r1 = Relation::new(
            "R1",
            vec!["A".into(), "B".into()],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
        )
        .unwrap();
        let r2 = Relation::new("R2", vec!["B".into(), "C".into()], vec![vec![2.0, 3.0]]).unwrap();
        let r3 = Relation::new("R3", vec!["A".into(), "C".into()], vec![vec![1.0, 3.0]]).unwrap();
        let db = DatabaseInstance::new(vec![r1, r2, r3]).unwrap();
        let (hq, hdb, _) = triangle_ghd().materialize(&db, &q, DEFAULT_BUDGET).unwrap();
        let idx =
            HierIndex::build(&hdb, &hq, 1, Some(0), IndexModes::count_only(), None).unwrap();
        let full = Rect::full(q.output());
        assert_eq!(idx.rcq(&full).unwrap(), 2);
    }

    #[test]
    fn identity_decomposition_on_hierarchical_input() {
        let q = QuerySpec::parse_text("R1(A,B)\nR2(A,C)\nOUTPUT: A,B,C\n").unwrap();
        let g = GhdSpec::parse_text("BAG 0 - attrs=A,B atoms=R1\nBAG 1 0 attrs=A,C atoms=R2\n").unwrap();
        let mut rng = SmallRng::seed_from_u64(409);
        let db = {
            let mk = |name: &str, a: &str, b: &str, rng: &mut SmallRng| {
                Relation::new(
                    name,
                    vec![a.into(), b.into()],
                    (0..20)
                        .map(|_| vec![rng.random_range(0..5) as f64, rng.random_range(0..6) as f64])
                        .collect(),
                )
                .unwrap()
            };
            DatabaseInstance::new(vec![mk("R1", "A", "B", &mut rng), mk("R2", "A", "C", &mut rng)])
                .unwrap()
        };
        let (hq, hdb, _) = g.materialize(&db, &q, DEFAULT_BUDGET).unwrap();
        let idx = HierIndex::build(&hdb, &hq, 4, None, IndexModes::count_only(), None).unwrap();
        for _ in 0..25 {
            let r = Rect::new(
                q.output()
                    .iter()
                    .map(|a| {
                        let x = rng.random_range(0..7) as f64;
                        let y = rng.random_range(0..7) as f64;
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
    fn validation_rejects_bad_specs() {
        let q = triangle();
        // uncovered atom
        let g = GhdSpec::parse_text("BAG 0 - attrs=A,B,C atoms=R1,R2\n").unwrap();
        assert!(matches!(g.validate(&q), Err(Error::InvalidGhd(_))));
        // atom attrs outside the label
        let g = GhdSpec::parse_text("BAG 0 - attrs=A,B atoms=R1,R2,R3\n").unwrap();
        assert!(matches!(g.validate(&q), Err(Error::InvalidGhd(_))));
        // two roots
        let g = GhdSpec::parse_text("BAG 0 - attrs=A,B atoms=R1\nBAG 1 - attrs=B,C,A atoms=R2,R3\n")
            .unwrap();
        assert!(matches!(g.validate(&q), Err(Error::InvalidGhd(_))));
        // disconnected attribute: A in bags 0 and 2 but not 1
        let q2 = QuerySpec::parse_text("R1(A,B)\nR2(B,C)\nR3(C,A)\nOUTPUT: A,B,C\n").unwrap();
        let g = GhdSpec::parse_text(
            "BAG 0 - attrs=A,B atoms=R1\nBAG 1 0 attrs=B,C atoms=R2\nBAG 2 1 attrs=C,A atoms=R3\n",
        )
        .unwrap();
        assert!(matches!(g.validate(&q2), Err(Error::InvalidGhd(_))));
        // atom in two bags
        let g = GhdSpec::parse_text("BAG 0 - attrs=A,B,C atoms=R1,R2,R3\nBAG 1 0 attrs=A,B atoms=R1\n")
            .unwrap();
        assert!(matches!(g.validate(&q), Err(Error::InvalidGhd(_))));
    }

    #[test]
    fn non_hierarchical_induced_query_rejected() {
        // a 3-path of bags induces a non-hierarchical query
        let q = QuerySpec::parse_text("R1(A,B)\nR2(B,C)\nR3(C,D)\nOUTPUT: A,D\n").unwrap();
        let g = GhdSpec::parse_text(
            "BAG 0 - attrs=A,B atoms=R1\nBAG 1 0 attrs=B,C atoms=R2\nBAG 2 1 attrs=C,D atoms=R3\n",
        )
        .unwrap();
        let r1 = Relation::new("R1", vec!["A".into(), "B".into()], vec![vec![1.0, 2.0]]).unwrap();
        let r2 = Relation::new("R2", vec!["B".into(), "C".into()], vec![vec![2.0, 3.0]]).unwrap();
        let r3 = Relation::new("R3", vec!["C".into(), "D".into()], vec![vec![3.0, 4.0]]).unwrap();
        let db = DatabaseInstance::new(vec![r1, r2, r3]).unwrap();
        assert!(matches!(
            g.materialize(&db, &q, DEFAULT_BUDGET),
            Err(Error::NotHierarchicalDecomposition)
        ));
    }
}
