//! `scq`: build and query space-time tunable indexes over conjunctive
//! query results, and benchmark them against baselines.

mod bench;
mod index;
mod persist;
mod rects;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use scq_core::ghd::GhdSpec;
use scq_core::relation::write_csv;
use scq_core::{synth_gen, QuerySpec};

use crate::bench::{run_bench, write_report, BenchConfig};
use crate::index::{load_database, BuildParams, BuiltIndex, IndexKind, Mode};

#[derive(Parser)]
#[command(name = "scq", version, about = "Space-time tunable indexes for range counting, nearest neighbor, and sampling over join results")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-relation matrix-query dataset
    Gen(GenArgs),
    /// Build an index and persist it to disk
    Build(BuildCmd),
    /// Answer a single count / ann / sample query
    Query(QueryCmd),
    /// Run a benchmark and emit a CSV report
    Bench(BenchCmd),
}

#[derive(Args)]
struct GenArgs {
    /// Directory receiving R1.csv, R2.csv, and matrix.query
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n1: u64,
    #[arg(long, default_value_t = 10_000)]
    n2: u64,
    #[arg(long, default_value_t = 100_000)]
    dom_a: u64,
    #[arg(long, default_value_t = 4_500)]
    dom_b: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct InputArgs {
    /// Query spec file: one atom per line, final line `OUTPUT: ...`
    #[arg(long)]
    query: PathBuf,
    /// CSV files, one per relation; the relation name is the file stem
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Hypertree decomposition file for non-hierarchical queries
    #[arg(long)]
    ghd: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, value_enum)]
    index: IndexKind,
    /// Query-time budget T (1 <= T <= N)
    #[arg(long, default_value_t = 1)]
    time_budget: u64,
    #[arg(long, value_enum, default_value_t = Mode::Count)]
    mode: Mode,
    /// Approximation factor for ann mode, in (0, 1]
    #[arg(long)]
    eps: Option<f64>,
    /// Recursion cutoff level for the hierarchical index
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Args)]
struct BuildCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    index: IndexArgs,
    /// Output path for the index image
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryCmd {
    /// Load a persisted index image instead of building
    #[arg(long, conflicts_with_all = ["query", "data"])]
    image: Option<PathBuf>,
    #[arg(long, required_unless_present = "image")]
    query: Option<PathBuf>,
    #[arg(long, num_args = 1.., required_unless_present = "image")]
    data: Vec<PathBuf>,
    #[arg(long)]
    ghd: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "image")]
    index: Option<IndexKind>,
    #[arg(long, default_value_t = 1)]
    time_budget: u64,
    #[arg(long, value_enum, default_value_t = Mode::Count)]
    mode: Mode,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    level: Option<usize>,
    /// Rectangle for count/sample: "A=1:100,C=:200" (blank bound = inf)
    #[arg(long)]
    rect: Option<String>,
    /// Point for ann: "A=3,C=11"
    #[arg(long)]
    point: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of draws in sample mode
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Args)]
struct BenchCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Exact per-side tuple count for generated ranges
    #[arg(long)]
    selectivity: Option<usize>,
    /// Report CSV path
    #[arg(long)]
    out: PathBuf,
    /// Also write per-trial counts (count mode only)
    #[arg(long)]
    counts_out: Option<PathBuf>,
    /// Zero the timing columns so reports are byte-identical across runs
    #[arg(long, default_value_t = false)]
    deterministic: bool,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Build(args) => cmd_build(args),
        Cmd::Query(args) => cmd_query(args),
        Cmd::Bench(args) => cmd_bench(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let db = synth_gen(args.n1, args.n2, args.dom_a, args.dom_b, args.seed);
    for rel in &db.relations {
        let path = args.out_dir.join(format!("{}.csv", rel.name));
        write_csv(rel, &path)?;
        println!("wrote {} ({} tuples)", path.display(), rel.len());
    }
    let qpath = args.out_dir.join("matrix.query");
    std::fs::write(&qpath, "R1(A,B)\nR2(C,B)\nOUTPUT: A,C\n")?;
    println!("wrote {}", qpath.display());
    Ok(())
}

fn load_inputs(input: &InputArgs) -> Result<(QuerySpec, scq_core::DatabaseInstance, Option<GhdSpec>)> {
    let q = QuerySpec::parse_file(&input.query)
        .with_context(|| format!("parsing {}", input.query.display()))?;
    let db = load_database(&input.data)?;
    let ghd = match &input.ghd {
        Some(path) => Some(GhdSpec::parse_file(path)?),
        None => None,
    };
    Ok((q, db, ghd))
}

fn cmd_build(args: BuildCmd) -> Result<()> {
    let (q, db, ghd) = load_inputs(&args.input)?;
    let params = BuildParams {
        kind: args.index.index,
        time_budget: args.index.time_budget,
        mode: args.index.mode,
        eps: args.index.eps,
        level: args.index.level,
    };
    let built = BuiltIndex::build(&db, &q, ghd.as_ref(), &params)?;
    persist::save(&built, &params, &args.out)?;
    println!(
        "built {} index: {} stored entries -> {}",
        params.kind,
        built.stored_entries(),
        args.out.display()
    );
    Ok(())
}

fn cmd_query(args: QueryCmd) -> Result<()> {
    let (built, mode) = match &args.image {
        Some(image) => {
            let (built, manifest) = persist::load(image)?;
            (built, manifest.params.mode)
        }
        None => {
            let input = InputArgs {
                query: args.query.clone().expect("clap enforces --query"),
                data: args.data.clone(),
                ghd: args.ghd.clone(),
            };
            let (q, db, ghd) = load_inputs(&input)?;
            let params = BuildParams {
                kind: args.index.expect("clap enforces --index"),
                time_budget: args.time_budget,
                mode: args.mode,
                eps: args.eps,
                level: args.level,
            };
            (BuiltIndex::build(&db, &q, ghd.as_ref(), &params)?, args.mode)
        }
    };
    match mode {
        Mode::Count => {
            let Some(rect) = &args.rect else { bail!("count mode needs --rect") };
            let r = rects::parse_rect(rect, built.query())?;
            println!("{}", built.count(&r)?);
        }
        Mode::Ann => {
            let Some(point) = &args.point else { bail!("ann mode needs --point") };
            let p = rects::parse_point(point, built.query())?;
            let ans = built.ann(&p)?;
            println!("{}", format_tuple(&ans));
        }
        Mode::Sample => {
            let Some(rect) = &args.rect else { bail!("sample mode needs --rect") };
            let r = rects::parse_rect(rect, built.query())?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            for _ in 0..args.samples {
                match built.sample(&r, &mut rng)? {
                    Some(t) => println!("{}", format_tuple(&t)),
                    None => println!("empty"),
                }
            }
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchCmd) -> Result<()> {
    let (q, db, ghd) = load_inputs(&args.input)?;
    let dataset_label = args
        .input
        .data
        .iter()
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()))
        .collect::<Vec<_>>()
        .join("+");
    let cfg = BenchConfig {
        params: BuildParams {
            kind: args.index.index,
            time_budget: args.index.time_budget,
            mode: args.index.mode,
            eps: args.index.eps,
            level: args.index.level,
        },
        trials: args.trials,
        seed: args.seed,
        selectivity: args.selectivity,
        deterministic: args.deterministic,
        dataset_label,
        counts_out: args.counts_out.clone(),
    };
    let row = run_bench(&db, &q, ghd.as_ref(), &cfg)?;
    write_report(&args.out, &[row])?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn format_tuple(t: &[f64]) -> String {
    t.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}
