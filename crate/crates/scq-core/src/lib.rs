//! Space-time tunable indexes for spatial queries over the results of
//! conjunctive queries on relational data.
//!
//! Given a conjunctive query and a database instance, the indexes here
//! answer range-count, (1+ε)-approximate nearest-neighbor, and uniform
//! range-sampling queries over the query's result multiset without fully
//! materializing the join. A time budget `T` tunes the tradeoff: larger
//! budgets shrink the index, smaller budgets speed up queries.
//!
//! Entry points by query shape:
//!
//! - [`star::StarIndex`] — range counting on k-star queries
//! - [`path::PathIndex`] — range counting on k-path queries
//! - [`heavy_light::HeavyLightIndex`] — counting, nearest neighbor, and
//!   sampling on (generalized) star queries
//! - [`hier::HierIndex`] — the same for any hierarchical query
//! - [`ghd::GhdSpec`] — reduction of general queries to hierarchical ones
//! - [`baseline`] — the RangeS and RangeT reference baselines
//! - [`oracle`] — brute-force reference implementations
//!
//! ```
//! use scq_core::{DatabaseInstance, Interval, QuerySpec, Rect, Relation};
//! use scq_core::star::StarIndex;
//!
//! let q = QuerySpec::parse_text("R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,A2\n")?;
//! let db = DatabaseInstance::new(vec![
//!     Relation::new("R1", vec!["A1".into(), "B".into()],
//!                   vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 6.0]])?,
//!     Relation::new("R2", vec!["A2".into(), "B".into()],
//!                   vec![vec![10.0, 5.0], vec![11.0, 6.0]])?,
//! ])?;
//! let index = StarIndex::build(&db, &q, 2)?;
//! let rect = Rect::new(vec![
//!     ("A1".into(), Interval::new(1.0, 2.0)?),
//!     ("A2".into(), Interval::new(10.0, 10.0)?),
//! ])?;
//! assert_eq!(index.rcq(&rect)?, 2);
//! # Ok::<(), scq_core::Error>(())
//! ```

pub mod baseline;
pub mod error;
pub mod geom;
pub mod ghd;
pub mod heavy_light;
pub mod hier;
pub mod joins;
pub mod measure;
pub mod oracle;
pub mod path;
pub mod query;
pub mod rect;
pub mod relation;
pub mod star;

pub use error::{Error, Result};
pub use heavy_light::IndexModes;
pub use measure::StoredEntries;
pub use query::{Atom, QueryClass, QuerySpec};
pub use rect::{extend_rect, Interval, QueryPoint, Rect};
pub use relation::{load_csv, synth_gen, AttributeId, DatabaseInstance, Relation, Tuple};

/// Doc-tested chapters of the guide in `book/`; `cargo test` keeps the
/// book's code snippets compiling against the current API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(unused)]
            struct $name;
        };
    }
    chapter!(DataModel, "../../../book/src/data-model.md");
    chapter!(Queries, "../../../book/src/queries.md");
    chapter!(RangeTrees, "../../../book/src/range-trees.md");
    chapter!(NearestNeighbor, "../../../book/src/nearest-neighbor.md");
    chapter!(StarIndex, "../../../book/src/star-index.md");
    chapter!(PathIndex, "../../../book/src/path-index.md");
    chapter!(HeavyLight, "../../../book/src/heavy-light.md");
    chapter!(Hierarchical, "../../../book/src/hierarchical.md");
    chapter!(Decompositions, "../../../book/src/decompositions.md");
    chapter!(Baselines, "../../../book/src/baselines.md");
}
