//! Conjunctive query representation and shape classification.
//!
//! A query is a list of atoms `R(A, B, ...)` plus a set of output (free)
//! attributes. Shapes are recognized structurally: k-star, generalized
//! k-star, k-path, hierarchical, or general. Star and path take precedence
//! over the (also true) hierarchical classification so that the specialized
//! indexes are selected first.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{AttributeId, DatabaseInstance, Relation};

/// One atom of a conjunctive query: a relation name and the attribute list
/// its columns are bound to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub relation: String,
    pub attrs: Vec<AttributeId>,
}

/// A conjunctive query: atoms plus an ordered list of output attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    atoms: Vec<Atom>,
    output: Vec<AttributeId>,
    all_attrs: Vec<AttributeId>,
}

/// Shape of a conjunctive query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryClass {
    /// k-star whose head contains no join attribute.
    Star(usize),
    /// k-star with join attributes in the head.
    GeneralizedStar(usize),
    /// k-path whose head contains no join attribute.
    Path(usize),
    Hierarchical,
    General,
}

impl fmt::Display for QueryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryClass::Star(k) => write!(f, "{k}-star"),
            QueryClass::GeneralizedStar(k) => write!(f, "generalized {k}-star"),
            QueryClass::Path(k) => write!(f, "{k}-path"),
            QueryClass::Hierarchical => write!(f, "hierarchical"),
            QueryClass::General => write!(f, "general"),
        }
    }
}

/// A maximal set of attributes sharing the same set of atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrGroup {
    pub attrs: Vec<AttributeId>,
    pub atom_set: BTreeSet<usize>,
}

impl QuerySpec {
    pub fn new(atoms: Vec<Atom>, output: Vec<AttributeId>) -> Result<QuerySpec> {
        if atoms.is_empty() {
            return Err(Error::InvalidQuery("no atoms".into()));
        }
        let mut all_attrs: Vec<AttributeId> = Vec::new();
        for atom in &atoms {
            if atom.attrs.is_empty() {
                return Err(Error::InvalidQuery(format!("atom {} has no attributes", atom.relation)));
            }
            let mut seen = HashSet::new();
            for a in &atom.attrs {
                if !seen.insert(a) {
                    return Err(Error::InvalidQuery(format!(
                        "atom {} repeats attribute {a}",
                        atom.relation
                    )));
                }
                if !all_attrs.contains(a) {
                    all_attrs.push(a.clone());
                }
            }
        }
        if output.is_empty() {
            return Err(Error::InvalidQuery("no output attributes".into()));
        }
        let mut seen = HashSet::new();
        for a in &output {
            if !seen.insert(a) {
                return Err(Error::InvalidQuery(format!("duplicate output attribute {a}")));
            }
            if !all_attrs.contains(a) {
                return Err(Error::InvalidQuery(format!("output attribute {a} not in any atom")));
            }
        }
        Ok(QuerySpec { atoms, output, all_attrs })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn output(&self) -> &[AttributeId] {
        &self.output
    }

    /// All attributes in first-appearance order.
    pub fn all_attrs(&self) -> &[AttributeId] {
        &self.all_attrs
    }

    pub fn is_full(&self) -> bool {
        self.all_attrs.iter().all(|a| self.output.contains(a))
    }

    /// Same atoms with every attribute in the head.
    pub fn to_full(&self) -> QuerySpec {
        QuerySpec::new(self.atoms.clone(), self.all_attrs.clone()).unwrap()
    }

    /// Same atoms with a different head.
    pub fn with_output(&self, output: Vec<AttributeId>) -> Result<QuerySpec> {
        QuerySpec::new(self.atoms.clone(), output)
    }

    /// The atom indices containing `attr` (the set `E_A`).
    pub fn atom_set(&self, attr: &AttributeId) -> BTreeSet<usize> {
        self.atoms
            .iter()
            .enumerate()
            .filter(|(_, at)| at.attrs.contains(attr))
            .map(|(i, _)| i)
            .collect()
    }

    /// Attributes appearing in more than one atom.
    pub fn join_attrs(&self) -> Vec<AttributeId> {
        self.all_attrs
            .iter()
            .filter(|a| self.atom_set(a).len() > 1)
            .cloned()
            .collect()
    }

    /// Groups attributes by their atom sets, in first-appearance order.
    pub fn attr_groups(&self) -> Vec<AttrGroup> {
        let mut groups: Vec<AttrGroup> = Vec::new();
        for a in &self.all_attrs {
            let set = self.atom_set(a);
            match groups.iter_mut().find(|g| g.atom_set == set) {
                Some(g) => g.attrs.push(a.clone()),
                None => groups.push(AttrGroup {
                    attrs: vec![a.clone()],
                    atom_set: set,
                }),
            }
        }
        groups
    }

    /// Pairwise nesting test on attribute atom-sets: every pair is nested or
    /// disjoint.
    pub fn is_hierarchical(&self) -> bool {
        let sets: Vec<BTreeSet<usize>> = self.all_attrs.iter().map(|a| self.atom_set(a)).collect();
        for (i, x) in sets.iter().enumerate() {
            for y in sets.iter().skip(i + 1) {
                let nested = x.is_subset(y) || y.is_subset(x);
                let disjoint = x.intersection(y).next().is_none();
                if !nested && !disjoint {
                    return false;
                }
            }
        }
        true
    }

    /// Deterministic shape classification, stable under atom and attribute
    /// reordering.
    pub fn classify(&self) -> QueryClass {
        if let Some(k) = self.star_shape() {
            let join: HashSet<_> = self.join_attrs().into_iter().collect();
            return if self.output.iter().any(|a| join.contains(a)) {
                QueryClass::GeneralizedStar(k)
            } else {
                QueryClass::Star(k)
            };
        }
        if let Some(k) = self.path_shape() {
            return QueryClass::Path(k);
        }
        if self.is_hierarchical() {
            return QueryClass::Hierarchical;
        }
        QueryClass::General
    }

    /// Returns `k` when the atoms form a k-star: one shared join group
    /// present in every atom, and a non-empty private remainder per atom.
    fn star_shape(&self) -> Option<usize> {
        let k = self.atoms.len();
        if k < 2 {
            return None;
        }
        let join = self.join_attrs();
        if join.is_empty() {
            return None;
        }
        for atom in &self.atoms {
            // every join attribute must appear in every atom
            if join.iter().any(|a| !atom.attrs.contains(a)) {
                return None;
            }
            // each atom needs a private head part
            if atom.attrs.iter().all(|a| join.contains(a)) {
                return None;
            }
        }
        Some(k)
    }

    /// Returns `k` when the atoms form a k-path (k >= 3; a 2-path is a
    /// 2-star) and no join attribute is in the head.
    fn path_shape(&self) -> Option<usize> {
        let k = self.atoms.len();
        if k < 3 {
            return None;
        }
        // every attribute must live in at most 2 atoms
        if self.all_attrs.iter().any(|a| self.atom_set(a).len() > 2) {
            return None;
        }
        // share graph over atoms
        let mut shared: HashMap<(usize, usize), Vec<AttributeId>> = HashMap::new();
        for a in &self.all_attrs {
            let set: Vec<usize> = self.atom_set(a).into_iter().collect();
            if set.len() == 2 {
                shared.entry((set[0], set[1])).or_default().push(a.clone());
            }
        }
        let mut degree = vec![0usize; k];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &(i, j) in shared.keys() {
            degree[i] += 1;
            degree[j] += 1;
            adj[i].push(j);
            adj[j].push(i);
        }
        let ends: Vec<usize> = (0..k).filter(|&i| degree[i] == 1).collect();
        if ends.len() != 2 || degree.iter().any(|&d| d == 0 || d > 2) {
            return None;
        }
        // walk the chain from one endpoint
        let mut order = vec![ends[0]];
        let mut prev = usize::MAX;
        while order.len() < k {
            let cur = *order.last().unwrap();
            let next = adj[cur].iter().copied().find(|&n| n != prev)?;
            prev = cur;
            order.push(next);
        }
        if *order.last().unwrap() != ends[1] {
            return None;
        }
        // middle atoms consist exactly of the two adjacent join groups;
        // endpoints need a non-empty private part
        let join: HashSet<_> = self.join_attrs().into_iter().collect();
        for (pos, &i) in order.iter().enumerate() {
            let atom = &self.atoms[i];
            if pos == 0 || pos == k - 1 {
                if atom.attrs.iter().all(|a| join.contains(a)) {
                    return None;
                }
            } else if atom.attrs.iter().any(|a| !join.contains(a)) {
                return None;
            }
        }
        // no join attribute in the head
        if self.output.iter().any(|a| join.contains(a)) {
            return None;
        }
        Some(k)
    }

    /// Atom order along the chain of a path query (endpoints first/last).
    pub fn path_order(&self) -> Option<Vec<usize>> {
        let k = self.atoms.len();
        if k == 2 {
            return Some(vec![0, 1]);
        }
        self.path_shape()?;
        let mut degree = vec![0usize; k];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); k];
        for a in &self.all_attrs {
            let set: Vec<usize> = self.atom_set(a).into_iter().collect();
            if set.len() == 2 && !adj[set[0]].contains(&set[1]) {
                degree[set[0]] += 1;
                degree[set[1]] += 1;
                adj[set[0]].push(set[1]);
                adj[set[1]].push(set[0]);
            }
        }
        let start = (0..k).find(|&i| degree[i] == 1)?;
        let mut order = vec![start];
        let mut prev = usize::MAX;
        while order.len() < k {
            let cur = *order.last().unwrap();
            let next = adj[cur].iter().copied().find(|&n| n != prev)?;
            prev = cur;
            order.push(next);
        }
        Some(order)
    }

    /// Parses the plain-text query format: one atom per line as
    /// `RelName(Attr1,Attr2,...)`, final line `OUTPUT: Attr,...`.
    pub fn parse_text(text: &str) -> Result<QuerySpec> {
        let mut atoms = Vec::new();
        let mut output: Option<Vec<AttributeId>> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("OUTPUT:") {
                if output.is_some() {
                    return Err(Error::InvalidQuery(format!("line {}: repeated OUTPUT", no + 1)));
                }
                output = Some(
                    rest.split(',')
                        .map(|s| s.trim())
                        .filter(|s| !s.is_empty())
                        .map(AttributeId::from)
                        .collect(),
                );
                continue;
            }
            let (name, rest) = line
                .split_once('(')
                .ok_or_else(|| Error::InvalidQuery(format!("line {}: expected RelName(...)", no + 1)))?;
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| Error::InvalidQuery(format!("line {}: missing ')'", no + 1)))?;
            let attrs: Vec<AttributeId> = inner
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(AttributeId::from)
                .collect();
            atoms.push(Atom {
                relation: name.trim().to_owned(),
                attrs,
            });
        }
        let output = output.ok_or_else(|| Error::InvalidQuery("missing OUTPUT line".into()))?;
        QuerySpec::new(atoms, output)
    }

    pub fn parse_file(path: impl AsRef<Path>) -> Result<QuerySpec> {
        let text = std::fs::read_to_string(path)?;
        QuerySpec::parse_text(&text)
    }
}

/// Resolves each atom against the database: one relation per atom with the
/// atom's attribute names bound positionally. Tuple ids are preserved.
pub fn bind(db: &DatabaseInstance, q: &QuerySpec) -> Result<Vec<Relation>> {
    q.atoms()
        .iter()
        .map(|atom| {
            let rel = db.relation(&atom.relation)?;
            if rel.arity() != atom.attrs.len() {
                return Err(Error::InvalidQuery(format!(
                    "atom {}({}) has {} attributes but relation has arity {}",
                    atom.relation,
                    atom.attrs.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(","),
                    atom.attrs.len(),
                    rel.arity()
                )));
            }
            Ok(Relation {
                name: atom.relation.clone(),
                attrs: atom.attrs.clone(),
                tuples: rel.tuples.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(text: &str) -> QuerySpec {
        QuerySpec::parse_text(text).unwrap()
    }

    #[test]
    fn classify_two_star() {
        let spec = q("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,A2\n");
        assert_eq!(spec.classify(), QueryClass::Star(2));
    }

    #[test]
    fn classify_generalized_star() {
        let spec = q("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,B,A2\n");
        assert_eq!(spec.classify(), QueryClass::GeneralizedStar(2));
    }

    #[test]
    fn classify_three_path() {
        let spec = q("R1(A1,B1)\nR2(B1,B2)\nR3(B2,A2)\nOUTPUT: A1,A2\n");
        assert_eq!(spec.classify(), QueryClass::Path(3));
        // the same atoms fail the hierarchical test
        assert!(!spec.is_hierarchical());
    }

    #[test]
    fn classify_intro_hierarchical() {
        let spec = q("R1(A,B,D)\nR2(A,B,E)\nR3(A,C,F)\nR4(A,C,G)\nOUTPUT: A,B,C,D,E,F,G\n");
        assert_eq!(spec.classify(), QueryClass::Hierarchical);
    }

    #[test]
    fn classify_triangle_general() {
        let spec = q("R1(A,B)\nR2(B,C)\nR3(A,C)\nOUTPUT: A,B,C\n");
        assert_eq!(spec.classify(), QueryClass::General);
    }

    #[test]
    fn generalized_path_is_not_path() {
        let spec = q("R1(A1,B1)\nR2(B1,B2)\nR3(B2,A2)\nOUTPUT: A1,B1,A2\n");
        assert_eq!(spec.classify(), QueryClass::General);
    }

    #[test]
    fn classify_stable_under_reordering() {
        let a = q("R1(A1,B1)\nR2(B1,B2)\nR3(B2,A2)\nOUTPUT: A1,A2\n");
        let b = q("R3(B2,A2)\nR1(A1,B1)\nR2(B1,B2)\nOUTPUT: A2,A1\n");
        assert_eq!(a.classify(), b.classify());
    }

    #[test]
    fn multi_attribute_star() {
        let spec = q("R1(A1,A1b,B,B2)\nR2(A2,B,B2)\nOUTPUT: A1,A1b,A2\n");
        assert_eq!(spec.classify(), QueryClass::Star(2));
    }

    #[test]
    fn single_atom_is_hierarchical() {
        let spec = q("R1(A,B)\nOUTPUT: A\n");
        assert_eq!(spec.classify(), QueryClass::Hierarchical);
    }

    #[test]
    fn attr_groups_merge_equal_sets() {
        let spec = q("R1(A,B,D)\nR2(A,B,E)\nOUTPUT: A,B,D,E\n");
        let groups = spec.attr_groups();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].attrs, vec![AttributeId::from("A"), AttributeId::from("B")]);
    }

    #[test]
    fn parse_rejects_missing_output() {
        assert!(QuerySpec::parse_text("R1(A,B)\n").is_err());
    }
}
