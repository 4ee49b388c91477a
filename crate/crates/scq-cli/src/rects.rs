//! Query-rectangle and query-point generation and parsing.

use anyhow::{anyhow, bail, Result};
use rand::Rng;

use scq_core::{AttributeId, DatabaseInstance, Interval, QueryPoint, QuerySpec, Rect};

/// Parses `"A=1:100,C=:200"`; a missing bound means infinite.
pub fn parse_rect(spec: &str, q: &QuerySpec) -> Result<Rect> {
    let mut entries = Vec::new();
    for field in spec.split(',').filter(|s| !s.is_empty()) {
        let (attr, range) = field
            .split_once('=')
            .ok_or_else(|| anyhow!("expected Attr=lo:hi, got {field:?}"))?;
        let (lo, hi) = range
            .split_once(':')
            .ok_or_else(|| anyhow!("expected lo:hi in {field:?}"))?;
        let lo = if lo.is_empty() { f64::NEG_INFINITY } else { lo.parse()? };
        let hi = if hi.is_empty() { f64::INFINITY } else { hi.parse()? };
        entries.push((AttributeId::from(attr.trim()), Interval::new(lo, hi)?));
    }
    let r = Rect::new(entries)?;
    r.validate_for(q)?;
    Ok(r)
}

/// Parses `"A=3,C=11"`.
pub fn parse_point(spec: &str, q: &QuerySpec) -> Result<QueryPoint> {
    let mut entries = Vec::new();
    for field in spec.split(',').filter(|s| !s.is_empty()) {
        let (attr, v) = field
            .split_once('=')
            .ok_or_else(|| anyhow!("expected Attr=value, got {field:?}"))?;
        entries.push((AttributeId::from(attr.trim()), v.parse()?));
    }
    let p = QueryPoint::new(entries)?;
    p.validate_for(q)?;
    Ok(p)
}

/// The column of the first atom containing `attr`, looked up in `db`.
fn owning_column(db: &DatabaseInstance, q: &QuerySpec, attr: &AttributeId) -> Result<Vec<f64>> {
    for atom in q.atoms() {
        if let Some(pos) = atom.attrs.iter().position(|a| a == attr) {
            let rel = db.relation(&atom.relation)?;
            let mut col: Vec<f64> = rel.tuples.iter().map(|t| t.values[pos]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            return Ok(col);
        }
    }
    bail!("attribute {attr} not found in any atom")
}

/// Uniform-mode rectangle: for each output attribute, both endpoints are
/// drawn uniformly at random from the sorted active-domain values.
pub fn uniform_rect<R: Rng + ?Sized>(
    db: &DatabaseInstance,
    q: &QuerySpec,
    rng: &mut R,
) -> Result<Rect> {
    let mut entries = Vec::new();
    for attr in q.output() {
        let mut col = owning_column(db, q, attr)?;
        col.dedup();
        if col.is_empty() {
            entries.push((attr.clone(), Interval::new(0.0, 0.0)?));
            continue;
        }
        let a = col[rng.random_range(0..col.len())];
        let b = col[rng.random_range(0..col.len())];
        entries.push((attr.clone(), Interval::new(a.min(b), a.max(b))?));
    }
    Ok(Rect::new(entries)?)
}

/// Uniform-mode point: each coordinate drawn from the active domain.
pub fn uniform_point<R: Rng + ?Sized>(
    db: &DatabaseInstance,
    q: &QuerySpec,
    rng: &mut R,
) -> Result<QueryPoint> {
    let mut entries = Vec::new();
    for attr in q.output() {
        let mut col = owning_column(db, q, attr)?;
        col.dedup();
        let v = if col.is_empty() {
            0.0
        } else {
            col[rng.random_range(0..col.len())]
        };
        entries.push((attr.clone(), v));
    }
    Ok(QueryPoint::new(entries)?)
}

/// Selectivity-mode rectangle: per output attribute, a range containing
/// exactly `s` tuples of the owning relation, chosen by a random offset
/// into the sorted column. Offsets whose window boundaries split runs of
/// equal values are rejected; an error is returned when no clean window
/// exists.
pub fn selectivity_rect<R: Rng + ?Sized>(
    db: &DatabaseInstance,
    q: &QuerySpec,
    s: usize,
    rng: &mut R,
) -> Result<Rect> {
    let mut entries = Vec::new();
    for attr in q.output() {
        let col = owning_column(db, q, attr)?;
        if s == 0 || s > col.len() {
            bail!("selectivity {s} out of range for attribute {attr} ({} tuples)", col.len());
        }
        let valid: Vec<usize> = (0..=col.len() - s)
            .filter(|&i| {
                let clean_lo = i == 0 || col[i - 1] < col[i];
                let clean_hi = i + s == col.len() || col[i + s - 1] < col[i + s];
                clean_lo && clean_hi
            })
            .collect();
        if valid.is_empty() {
            bail!("no range over {attr} has selectivity exactly {s}");
        }
        let i = valid[rng.random_range(0..valid.len())];
        entries.push((attr.clone(), Interval::new(col[i], col[i + s - 1])?));
    }
    Ok(Rect::new(entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;
    use scq_core::synth_gen;

    #[test]
    fn selectivity_is_exact() {
        let q = QuerySpec::parse_text("R1(A,B)\nR2(C,B)\nOUTPUT: A,C\n").unwrap();
        let db = synth_gen(200, 200, 500, 40, 5);
        let mut rng = SmallRng::seed_from_u64(1);
        for s in [1usize, 5, 37, 200] {
            let r = selectivity_rect(&db, &q, s, &mut rng).unwrap();
            for (attr, rel_name, pos) in [("A", "R1", 0usize), ("C", "R2", 0usize)] {
                let iv = r.interval(&attr.into()).unwrap();
                let count = db
                    .relation(rel_name)
                    .unwrap()
                    .tuples
                    .iter()
                    .filter(|t| iv.contains(t.values[pos]))
                    .count();
                assert_eq!(count, s, "attr {attr} selectivity");
            }
        }
    }

    #[test]
    fn rect_parse_round_trip() {
        let q = QuerySpec::parse_text("R1(A,B)\nR2(C,B)\nOUTPUT: A,C\n").unwrap();
        let r = parse_rect("A=1:100,C=:200", &q).unwrap();
        assert_eq!(r.interval(&"A".into()).unwrap(), Interval::new(1.0, 100.0).unwrap());
        assert_eq!(
            r.interval(&"C".into()).unwrap(),
            Interval::new(f64::NEG_INFINITY, 200.0).unwrap()
        );
        assert!(parse_rect("A=1:100", &q).is_err()); // missing C
    }
}
