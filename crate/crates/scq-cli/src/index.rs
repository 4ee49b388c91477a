//! One enum over every index kind the CLI can build, with a uniform query
//! surface.

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use scq_core::baseline::{RangeSIndex, RangeTIndex};
use scq_core::ghd::GhdSpec;
use scq_core::heavy_light::HeavyLightIndex;
use scq_core::hier::HierIndex;
use scq_core::oracle::DEFAULT_BUDGET;
use scq_core::path::PathIndex;
use scq_core::star::StarIndex;
use scq_core::{
    load_csv, DatabaseInstance, IndexModes, QueryPoint, QuerySpec, Rect,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Star,
    Path,
    Heavylight,
    Hier,
    Ranges,
    Ranget,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IndexKind::Star => "star",
            IndexKind::Path => "path",
            IndexKind::Heavylight => "heavylight",
            IndexKind::Hier => "hier",
            IndexKind::Ranges => "ranges",
            IndexKind::Ranget => "ranget",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Count,
    Ann,
    Sample,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Count => "count",
            Mode::Ann => "ann",
            Mode::Sample => "sample",
        })
    }
}

/// Build-time parameters, persisted into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildParams {
    pub kind: IndexKind,
    pub time_budget: u64,
    pub mode: Mode,
    pub eps: Option<f64>,
    pub level: Option<usize>,
}

/// A built index of any kind.
#[derive(Serialize, Deserialize)]
pub enum BuiltIndex {
    Star(StarIndex),
    Path(PathIndex),
    HeavyLight(HeavyLightIndex),
    Hier(HierIndex),
    RangeS(RangeSIndex),
    RangeT(RangeTIndex),
}

impl BuiltIndex {
    pub fn build(
        db: &DatabaseInstance,
        q: &QuerySpec,
        ghd: Option<&GhdSpec>,
        params: &BuildParams,
    ) -> Result<BuiltIndex> {
        if params.mode == Mode::Ann && params.eps.is_none() {
            bail!("--mode ann requires --eps");
        }
        let modes = IndexModes {
            ann: params.mode == Mode::Ann,
            sample: params.mode == Mode::Sample,
        };
        let t = params.time_budget;
        Ok(match params.kind {
            IndexKind::Star => BuiltIndex::Star(StarIndex::build(db, q, t)?),
            IndexKind::Path => BuiltIndex::Path(PathIndex::build(db, q, t)?),
            IndexKind::Heavylight => {
                BuiltIndex::HeavyLight(HeavyLightIndex::build(db, q, t, modes, params.eps)?)
            }
            IndexKind::Hier => {
                let (hq, hdb) = match ghd {
                    Some(g) => {
                        let (hq, hdb, report) = g.materialize(db, q, DEFAULT_BUDGET)?;
                        for (id, size, exp) in &report.bags {
                            eprintln!("bag {id}: {size} tuples (size exponent {exp:.2})");
                        }
                        (hq, hdb)
                    }
                    None => (q.clone(), db.clone()),
                };
                BuiltIndex::Hier(HierIndex::build(
                    &hdb,
                    &hq,
                    t,
                    params.level,
                    modes,
                    params.eps,
                )?)
            }
            IndexKind::Ranges => BuiltIndex::RangeS(RangeSIndex::build(db, q)?),
            IndexKind::Ranget => BuiltIndex::RangeT(RangeTIndex::build(db, q, DEFAULT_BUDGET)?),
        })
    }

    /// The (possibly decomposition-induced) query the index answers.
    pub fn query(&self) -> &QuerySpec {
        match self {
            BuiltIndex::Star(i) => i.query(),
            BuiltIndex::Path(i) => i.query(),
            BuiltIndex::HeavyLight(i) => i.query(),
            BuiltIndex::Hier(i) => i.query(),
            BuiltIndex::RangeS(i) => i.query(),
            BuiltIndex::RangeT(i) => i.query(),
        }
    }

    pub fn count(&self, r: &Rect) -> Result<u64> {
        Ok(match self {
            BuiltIndex::Star(i) => i.rcq(r)?,
            BuiltIndex::Path(i) => i.rcq(r)?,
            BuiltIndex::HeavyLight(i) => i.rcq(r)?,
            BuiltIndex::Hier(i) => i.rcq(r)?,
            BuiltIndex::RangeS(i) => i.count(r)?,
            BuiltIndex::RangeT(i) => i.count(r)?,
        })
    }

    pub fn ann(&self, p: &QueryPoint) -> Result<Vec<f64>> {
        Ok(match self {
            BuiltIndex::HeavyLight(i) => i.ann(p)?,
            BuiltIndex::Hier(i) => i.ann(p)?,
            _ => bail!("ann queries need --index heavylight or hier"),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, r: &Rect, rng: &mut R) -> Result<Option<Vec<f64>>> {
        Ok(match self {
            BuiltIndex::HeavyLight(i) => i.rsq(r, rng)?,
            BuiltIndex::Hier(i) => i.rsq(r, rng)?,
            _ => bail!("sample queries need --index heavylight or hier"),
        })
    }

    pub fn stored_entries(&self) -> u64 {
        match self {
            BuiltIndex::Star(i) => i.stored_entries(),
            BuiltIndex::Path(i) => i.stored_entries(),
            BuiltIndex::HeavyLight(i) => i.stored_entries(),
            BuiltIndex::Hier(i) => i.stored_entries(),
            BuiltIndex::RangeS(i) => i.stored_entries(),
            BuiltIndex::RangeT(i) => i.stored_entries(),
        }
    }
}

/// Loads the relations named by the query from CSV files; the relation
/// name is the file stem.
pub fn load_database(paths: &[PathBuf]) -> Result<DatabaseInstance> {
    let mut relations = Vec::new();
    for path in paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad data path {}", path.display()))?;
        relations.push(
            load_csv(path, name).with_context(|| format!("loading {}", path.display()))?,
        );
    }
    Ok(DatabaseInstance::new(relations)?)
}
