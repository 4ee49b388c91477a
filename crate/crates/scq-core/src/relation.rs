//! Relational data model: attributes, tuples, relations, and database
//! instances under bag semantics.
//!
//! Attribute values are finite 64-bit reals. NaN and infinities are rejected
//! at ingestion so every column admits a total order, and `-0.0` is
//! normalized to `0.0` so bit patterns can serve as equality keys.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of an attribute, unique within a query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeId(pub String);

impl AttributeId {
    pub fn new(name: impl Into<String>) -> Self {
        AttributeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AttributeId {
    fn from(s: &str) -> Self {
        AttributeId(s.to_owned())
    }
}

/// Normalizes a finite value so equal values share one bit pattern.
#[inline]
pub fn norm(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Bit pattern of a normalized finite value; usable as an exact hash/order key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueKey(pub u64);

impl ValueKey {
    pub fn of(v: f64) -> Self {
        debug_assert!(v.is_finite());
        ValueKey(norm(v).to_bits())
    }

    pub fn value(self) -> f64 {
        f64::from_bits(self.0)
    }
}

/// Composite key over several attribute values.
pub type GroupKey = Vec<ValueKey>;

/// A tuple of a relation. `id` is the intra-relation ordinal used for
/// tie-breaking when sorting on a column with duplicate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub values: Vec<f64>,
    pub id: u32,
}

impl Tuple {
    pub fn value(&self, pos: usize) -> f64 {
        self.values[pos]
    }

    pub fn key(&self, positions: &[usize]) -> GroupKey {
        positions.iter().map(|&p| ValueKey::of(self.values[p])).collect()
    }
}

/// A named relation: an ordered attribute list and a multiset of tuples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub attrs: Vec<AttributeId>,
    pub tuples: Vec<Tuple>,
}

impl Relation {
    /// Builds a relation from raw rows, assigning ids in row order.
    /// Rejects arity mismatches and non-finite values.
    pub fn new(
        name: impl Into<String>,
        attrs: Vec<AttributeId>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Relation> {
        let name = name.into();
        let mut seen = std::collections::HashSet::new();
        for a in &attrs {
            if a.0.is_empty() {
                return Err(Error::InvalidRelation(format!("{name}: empty attribute name")));
            }
            if !seen.insert(a.clone()) {
                return Err(Error::InvalidRelation(format!("{name}: duplicate attribute {a}")));
            }
        }
        let mut tuples = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != attrs.len() {
                return Err(Error::InvalidRelation(format!(
                    "{name}: row {i} has arity {} but relation has {} attributes",
                    row.len(),
                    attrs.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidRelation(format!(
                    "{name}: row {i} contains non-finite value {v}"
                )));
            }
            tuples.push(Tuple {
                values: row.into_iter().map(norm).collect(),
                id: i as u32,
            });
        }
        Ok(Relation { name, attrs, tuples })
    }

    pub fn arity(&self) -> usize {
        self.attrs.len()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn position(&self, attr: &AttributeId) -> Option<usize> {
        self.attrs.iter().position(|a| a == attr)
    }

    /// Keeps the tuples whose original id passes `keep`, then renumbers ids.
    pub fn retain_reindexed(&self, keep: impl Fn(u32) -> bool) -> Relation {
        let mut tuples: Vec<Tuple> = self.tuples.iter().filter(|t| keep(t.id)).cloned().collect();
        for (i, t) in tuples.iter_mut().enumerate() {
            t.id = i as u32;
        }
        Relation {
            name: self.name.clone(),
            attrs: self.attrs.clone(),
            tuples,
        }
    }
}

/// A collection of named relations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatabaseInstance {
    pub relations: Vec<Relation>,
}

impl DatabaseInstance {
    pub fn new(relations: Vec<Relation>) -> Result<DatabaseInstance> {
        let mut seen = std::collections::HashSet::new();
        for r in &relations {
            if !seen.insert(r.name.clone()) {
                return Err(Error::InvalidRelation(format!("duplicate relation name {}", r.name)));
            }
        }
        Ok(DatabaseInstance { relations })
    }

    /// Total tuple count across relations.
    pub fn n(&self) -> u64 {
        self.relations.iter().map(|r| r.len() as u64).sum()
    }

    pub fn relation(&self, name: &str) -> Result<&Relation> {
        self.relations
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRelation(name.to_owned()))
    }
}

/// Loads a relation from a CSV file. The header row lists attribute names;
/// every body cell must be a finite number.
pub fn load_csv(path: impl AsRef<Path>, name: &str) -> Result<Relation> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path_str.clone(),
            row: 0,
            col: 0,
            msg: e.to_string(),
        })?;
    let attrs: Vec<AttributeId> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path_str.clone(),
            row: 1,
            col: 0,
            msg: e.to_string(),
        })?
        .iter()
        .map(AttributeId::from)
        .collect();
    if attrs.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            row: 1,
            col: 0,
            msg: "empty header".to_owned(),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            path: path_str.clone(),
            row: row_no,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.len() != attrs.len() {
            return Err(Error::Parse {
                path: path_str.clone(),
                row: row_no,
                col: record.len(),
                msg: format!("expected {} cells, found {}", attrs.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(attrs.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                row: row_no,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NaNValue {
                    path: path_str.clone(),
                    row: row_no,
                    col: j + 1,
                    value: v,
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Relation::new(name, attrs, rows)
}

/// Writes a relation as CSV (header row of attribute names, numeric body).
pub fn write_csv(rel: &Relation, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Parse {
        path: path.as_ref().display().to_string(),
        row: 0,
        col: 0,
        msg: e.to_string(),
    })?;
    let io_err = |e: csv::Error| Error::Parse {
        path: path.as_ref().display().to_string(),
        row: 0,
        col: 0,
        msg: e.to_string(),
    };
    w.write_record(rel.attrs.iter().map(|a| a.as_str())).map_err(io_err)?;
    for t in &rel.tuples {
        w.write_record(t.values.iter().map(|v| format_value(*v))).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn format_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Generates the two-relation matrix-query instance: `R1(A, B)` and
/// `R2(C, B)` with values drawn i.i.d. uniformly from integer domains.
/// Deterministic given the seed.
pub fn synth_gen(n1: u64, n2: u64, dom_a: u64, dom_b: u64, seed: u64) -> DatabaseInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: u64, dom_x: u64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(1..=dom_x.max(1)) as f64;
                let b = rng.random_range(1..=dom_b.max(1)) as f64;
                vec![x, b]
            })
            .collect()
    };
    let r1 = Relation::new("R1", vec!["A".into(), "B".into()], draw(n1, dom_a)).unwrap();
    let r2 = Relation::new("R2", vec!["C".into(), "B".into()], draw(n2, dom_a)).unwrap();
    DatabaseInstance::new(vec![r1, r2]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("scq_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        std::fs::write(&path, "A,B\n1,5\n2,5\n").unwrap();
        let rel = load_csv(&path, "R1").unwrap();
        assert_eq!(rel.attrs, vec![AttributeId::from("A"), AttributeId::from("B")]);
        assert_eq!(rel.len(), 2);
        assert_eq!(rel.tuples[1].values, vec![2.0, 5.0]);
        assert_eq!(rel.tuples[1].id, 1);
    }

    #[test]
    fn csv_header_only() {
        let dir = std::env::temp_dir().join("scq_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        std::fs::write(&path, "A,B\n").unwrap();
        let rel = load_csv(&path, "R").unwrap();
        assert_eq!(rel.len(), 0);
        assert_eq!(rel.arity(), 2);
    }

    #[test]
    fn csv_rejects_nan() {
        let dir = std::env::temp_dir().join("scq_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nan.csv");
        std::fs::write(&path, "A,B\n1,nan\n").unwrap();
        match load_csv(&path, "R") {
            Err(Error::NaNValue { row: 2, col: 2, .. }) => {}
            other => panic!("expected NaNValue, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_garbage_with_position() {
        let dir = std::env::temp_dir().join("scq_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "A,B\n1,2\nx,3\n").unwrap();
        match load_csv(&path, "R") {
            Err(Error::Parse { row: 3, col: 1, .. }) => {}
            other => panic!("expected Parse at 3:1, got {other:?}"),
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_gen(50, 60, 1000, 45, 7);
        let b = synth_gen(50, 60, 1000, 45, 7);
        assert_eq!(a.n(), 110);
        for (ra, rb) in a.relations.iter().zip(&b.relations) {
            assert_eq!(ra.tuples, rb.tuples);
        }
    }

    #[test]
    fn synth_empty() {
        let db = synth_gen(0, 0, 10, 10, 1);
        assert_eq!(db.n(), 0);
        assert_eq!(db.relations.len(), 2);
    }

    #[test]
    fn negative_zero_normalized() {
        let r = Relation::new("R", vec!["A".into()], vec![vec![-0.0]]).unwrap();
        assert_eq!(r.tuples[0].values[0].to_bits(), 0.0f64.to_bits());
        assert_eq!(ValueKey::of(-0.0), ValueKey::of(0.0));
    }
}
