//! The benchmark harness: timed builds, seeded workload generation, and
//! plot-ready CSV reports.

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use scq_core::{DatabaseInstance, QuerySpec};

use crate::index::{BuildParams, BuiltIndex, Mode};
use crate::rects::{selectivity_rect, uniform_point, uniform_rect};

pub struct BenchConfig {
    pub params: BuildParams,
    pub trials: usize,
    pub seed: u64,
    pub selectivity: Option<usize>,
    pub deterministic: bool,
    pub dataset_label: String,
    pub counts_out: Option<PathBuf>,
}

pub const REPORT_HEADER: &str =
    "index,dataset,n,t_budget,build_time_ms,stored_entries,avg_query_time_us,selectivity,trials,seed";

/// One row of the bench report.
pub struct BenchRow {
    pub index: String,
    pub dataset: String,
    pub n: u64,
    pub t_budget: u64,
    pub build_time_ms: f64,
    pub stored_entries: u64,
    pub avg_query_time_us: f64,
    pub selectivity: Option<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{},{:.3},{},{},{}",
            self.index,
            self.dataset,
            self.n,
            self.t_budget,
            self.build_time_ms,
            self.stored_entries,
            self.avg_query_time_us,
            self.selectivity.map_or(String::from(""), |s| s.to_string()),
            self.trials,
            self.seed,
        )
    }
}

pub fn run_bench(
    db: &DatabaseInstance,
    q: &QuerySpec,
    ghd: Option<&scq_core::ghd::GhdSpec>,
    cfg: &BenchConfig,
) -> Result<BenchRow> {
    let build_start = Instant::now();
    let index = BuiltIndex::build(db, q, ghd, &cfg.params)?;
    let build_time_ms = build_start.elapsed().as_secs_f64() * 1e3;

    // workload generation is seeded and independent of timing
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    enum Workload {
        Rects(Vec<scq_core::Rect>),
        Points(Vec<scq_core::QueryPoint>),
    }
    let workload = match cfg.params.mode {
        Mode::Count | Mode::Sample => {
            let mut rects = Vec::with_capacity(cfg.trials);
            for _ in 0..cfg.trials {
                rects.push(match cfg.selectivity {
                    Some(s) => selectivity_rect(db, q, s, &mut rng)?,
                    None => uniform_rect(db, q, &mut rng)?,
                });
            }
            Workload::Rects(rects)
        }
        Mode::Ann => {
            let mut points = Vec::with_capacity(cfg.trials);
            for _ in 0..cfg.trials {
                points.push(uniform_point(db, q, &mut rng)?);
            }
            Workload::Points(points)
        }
    };

    // first 10% of trials are warm-up and excluded from the average
    let warmup = cfg.trials / 10;
    let mut total_ns = 0u128;
    let mut timed = 0usize;
    let mut counts: Vec<u64> = Vec::new();
    match &workload {
        Workload::Rects(rects) => {
            let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            for (i, r) in rects.iter().enumerate() {
                let t0 = Instant::now();
                match cfg.params.mode {
                    Mode::Count => {
                        let c = index.count(r)?;
                        counts.push(c);
                    }
                    Mode::Sample => {
                        let _ = index.sample(r, &mut sample_rng)?;
                    }
                    Mode::Ann => unreachable!(),
                }
                if i >= warmup {
                    total_ns += t0.elapsed().as_nanos();
                    timed += 1;
                }
            }
        }
        Workload::Points(points) => {
            for (i, p) in points.iter().enumerate() {
                let t0 = Instant::now();
                let _ = index.ann(p)?;
                if i >= warmup {
                    total_ns += t0.elapsed().as_nanos();
                    timed += 1;
                }
            }
        }
    }
    if let Some(path) = &cfg.counts_out {
        write_counts(path, &counts)?;
    }

    let avg_query_time_us = if timed > 0 {
        total_ns as f64 / timed as f64 / 1e3
    } else {
        0.0
    };
    Ok(BenchRow {
        index: cfg.params.kind.to_string(),
        dataset: cfg.dataset_label.clone(),
        n: db.n(),
        t_budget: cfg.params.time_budget,
        build_time_ms: if cfg.deterministic { 0.0 } else { build_time_ms },
        stored_entries: index.stored_entries(),
        avg_query_time_us: if cfg.deterministic { 0.0 } else { avg_query_time_us },
        selectivity: cfg.selectivity,
        trials: cfg.trials,
        seed: cfg.seed,
    })
}

pub fn write_report(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{REPORT_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv())?;
    }
    Ok(())
}

fn write_counts(path: &Path, counts: &[u64]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "trial,count")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(f, "{i},{c}")?;
    }
    Ok(())
}
