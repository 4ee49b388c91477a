use thiserror::Error;

/// Errors produced by data ingestion, query classification, index
/// construction, and query evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{row}:{col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },
    #[error("{path}:{row}:{col}: non-finite value {value:?} rejected")]
    NaNValue {
        path: String,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("invalid relation: {0}")]
    InvalidRelation(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("query has no join tree (cyclic)")]
    CyclicQuery,
    #[error("index requires {expected} but query classifies as {found}")]
    WrongClass { expected: String, found: String },
    #[error("time budget {0} out of range [1, N]")]
    BadBudget(u64),
    #[error("estimated work {estimated} exceeds budget {cap}")]
    BudgetExceeded { estimated: u64, cap: u64 },
    #[error("rectangle/point does not match the query's output attributes: {0}")]
    DimensionMismatch(String),
    #[error("query result set is empty")]
    EmptyResult,
    #[error("index was not built in {0} mode")]
    ModeMismatch(&'static str),
    #[error("output attributes are not covered by a single relation")]
    NotCovered,
    #[error("query is not hierarchical")]
    NotHierarchical,
    #[error("invalid GHD: {0}")]
    InvalidGhd(String),
    #[error("decomposition does not induce a hierarchical query")]
    NotHierarchicalDecomposition,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
