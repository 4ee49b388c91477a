//! End-to-end tests of the `scq` binary.

use std::path::Path;
use std::process::{Command, Output};

fn scq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scq"))
        .args(args)
        .output()
        .expect("spawn scq")
}

fn ok(args: &[&str]) -> String {
    let out = scq(args);
    assert!(
        out.status.success(),
        "scq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_db_a(dir: &Path) {
    std::fs::write(dir.join("R1.csv"), "A1,B\n1,5\n2,5\n3,6\n").unwrap();
    std::fs::write(dir.join("R2.csv"), "A2,B\n10,5\n11,6\n").unwrap();
    std::fs::write(dir.join("star.query"), "R1(A1,B)\nR2(A2,B)\nOUTPUT: A1,A2\n").unwrap();
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    for d in [&d1, &d2] {
        ok(&[
            "gen",
            "--out-dir",
            d.to_str().unwrap(),
            "--n1",
            "50",
            "--n2",
            "60",
            "--dom-a",
            "100",
            "--dom-b",
            "10",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(
        std::fs::read(d1.join("R1.csv")).unwrap(),
        std::fs::read(d2.join("R1.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(d1.join("R2.csv")).unwrap(),
        std::fs::read(d2.join("R2.csv")).unwrap()
    );
}

#[test]
fn count_query_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let q = dir.path().join("star.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    for kind in ["star", "path", "heavylight", "hier", "ranges", "ranget"] {
        let out = ok(&[
            "query",
            "--query",
            q.to_str().unwrap(),
            "--data",
            r1.to_str().unwrap(),
            r2.to_str().unwrap(),
            "--index",
            kind,
            "--time-budget",
            "2",
            "--rect",
            "A1=1:2,A2=10:10",
        ]);
        assert_eq!(out.trim(), "2", "index {kind}");
    }
}

#[test]
fn image_round_trip_and_checksum() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let q = dir.path().join("star.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    let image = dir.path().join("star.idx");
    ok(&[
        "build",
        "--query",
        q.to_str().unwrap(),
        "--data",
        r1.to_str().unwrap(),
        r2.to_str().unwrap(),
        "--index",
        "star",
        "--time-budget",
        "2",
        "--out",
        image.to_str().unwrap(),
    ]);
    assert!(image.with_file_name("star.idx.manifest.json").exists());
    let out = ok(&[
        "query",
        "--image",
        image.to_str().unwrap(),
        "--rect",
        "A1=1:2,A2=10:10",
    ]);
    assert_eq!(out.trim(), "2");
    // corrupt one byte: the checksum must catch it
    let mut bytes = std::fs::read(&image).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&image, bytes).unwrap();
    let out = scq(&[
        "query",
        "--image",
        image.to_str().unwrap(),
        "--rect",
        "A1=1:2,A2=10:10",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn ann_and_sample_modes() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let q = dir.path().join("star.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    let common = [
        "--query",
        q.to_str().unwrap(),
        "--data",
        r1.to_str().unwrap(),
        r2.to_str().unwrap(),
        "--index",
        "heavylight",
        "--time-budget",
        "2",
    ];
    let mut args = vec!["query"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--mode", "ann", "--eps", "0.5", "--point", "A1=3,A2=11"]);
    assert_eq!(ok(&args).trim(), "3,11");

    let mut args = vec!["query"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&[
        "--mode",
        "sample",
        "--rect",
        "A1=3:3,A2=:",
        "--seed",
        "5",
        "--samples",
        "3",
    ]);
    let out = ok(&args);
    for line in out.lines() {
        assert_eq!(line.trim(), "3,11");
    }
}

#[test]
fn ann_requires_eps() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let out = scq(&[
        "query",
        "--query",
        dir.path().join("star.query").to_str().unwrap(),
        "--data",
        dir.path().join("R1.csv").to_str().unwrap(),
        dir.path().join("R2.csv").to_str().unwrap(),
        "--index",
        "heavylight",
        "--mode",
        "ann",
        "--point",
        "A1=0,A2=0",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--eps"));
}

#[test]
fn bench_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--n1",
        "150",
        "--n2",
        "150",
        "--dom-a",
        "300",
        "--dom-b",
        "20",
        "--seed",
        "9",
    ]);
    let q = dir.path().join("matrix.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    let run = |out: &Path, counts: &Path| {
        ok(&[
            "bench",
            "--query",
            q.to_str().unwrap(),
            "--data",
            r1.to_str().unwrap(),
            r2.to_str().unwrap(),
            "--index",
            "star",
            "--time-budget",
            "17",
            "--trials",
            "40",
            "--seed",
            "11",
            "--deterministic",
            "--out",
            out.to_str().unwrap(),
            "--counts-out",
            counts.to_str().unwrap(),
        ]);
    };
    let (o1, c1) = (dir.path().join("rep1.csv"), dir.path().join("cnt1.csv"));
    let (o2, c2) = (dir.path().join("rep2.csv"), dir.path().join("cnt2.csv"));
    run(&o1, &c1);
    run(&o2, &c2);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    let report = std::fs::read_to_string(&o1).unwrap();
    assert!(report.starts_with(
        "index,dataset,n,t_budget,build_time_ms,stored_entries,avg_query_time_us,selectivity,trials,seed"
    ));
}

#[test]
fn bench_counts_agree_across_indexes() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let q = dir.path().join("star.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    let run = |kind: &str, counts: &Path| {
        ok(&[
            "bench",
            "--query",
            q.to_str().unwrap(),
            "--data",
            r1.to_str().unwrap(),
            r2.to_str().unwrap(),
            "--index",
            kind,
            "--time-budget",
            "2",
            "--trials",
            "100",
            "--seed",
            "7",
            "--deterministic",
            "--out",
            dir.path().join(format!("{kind}.csv")).to_str().unwrap(),
            "--counts-out",
            counts.to_str().unwrap(),
        ]);
    };
    let c_star = dir.path().join("counts_star.csv");
    let c_ranges = dir.path().join("counts_ranges.csv");
    run("star", &c_star);
    run("ranges", &c_ranges);
    assert_eq!(
        std::fs::read(&c_star).unwrap(),
        std::fs::read(&c_ranges).unwrap(),
        "per-trial counts identical row by row"
    );
}

#[test]
fn selectivity_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--n1",
        "120",
        "--n2",
        "120",
        "--dom-a",
        "5000",
        "--dom-b",
        "15",
        "--seed",
        "13",
    ]);
    ok(&[
        "bench",
        "--query",
        dir.path().join("matrix.query").to_str().unwrap(),
        "--data",
        dir.path().join("R1.csv").to_str().unwrap(),
        dir.path().join("R2.csv").to_str().unwrap(),
        "--index",
        "star",
        "--time-budget",
        "11",
        "--trials",
        "20",
        "--seed",
        "3",
        "--selectivity",
        "10",
        "--deterministic",
        "--out",
        dir.path().join("sel.csv").to_str().unwrap(),
    ]);
    let report = std::fs::read_to_string(dir.path().join("sel.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    assert!(row.contains(",10,20,3"), "selectivity column present: {row}");
}

#[test]
fn ghd_route_answers_triangle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("R1.csv"), "A,B\n1,2\n2,2\n3,1\n").unwrap();
    std::fs::write(dir.path().join("R2.csv"), "B,C\n2,3\n2,4\n1,3\n").unwrap();
    std::fs::write(dir.path().join("R3.csv"), "A,C\n1,3\n2,4\n3,3\n").unwrap();
    std::fs::write(
        dir.path().join("tri.query"),
        "R1(A,B)\nR2(B,C)\nR3(A,C)\nOUTPUT: A,B,C\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("tri.ghd"),
        "BAG 0 - attrs=A,B,C atoms=R1,R2,R3\n",
    )
    .unwrap();
    // triangles: (1,2,3), (2,2,4), (3,1,3)
    let out = ok(&[
        "query",
        "--query",
        dir.path().join("tri.query").to_str().unwrap(),
        "--data",
        dir.path().join("R1.csv").to_str().unwrap(),
        dir.path().join("R2.csv").to_str().unwrap(),
        dir.path().join("R3.csv").to_str().unwrap(),
        "--ghd",
        dir.path().join("tri.ghd").to_str().unwrap(),
        "--index",
        "hier",
        "--time-budget",
        "1",
        "--rect",
        "A=1:2,B=:,C=:",
    ]);
    assert_eq!(out.trim(), "2");
}

#[test]
fn index_images_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_db_a(dir.path());
    let q = dir.path().join("star.query");
    let r1 = dir.path().join("R1.csv");
    let r2 = dir.path().join("R2.csv");
    let build = |out: &Path| {
        ok(&[
            "build",
            "--query",
            q.to_str().unwrap(),
            "--data",
            r1.to_str().unwrap(),
            r2.to_str().unwrap(),
            "--index",
            "star",
            "--time-budget",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let i1 = dir.path().join("a.idx");
    let i2 = dir.path().join("b.idx");
    build(&i1);
    build(&i2);
    assert_eq!(
        std::fs::read(&i1).unwrap(),
        std::fs::read(&i2).unwrap(),
        "index layout must be deterministic"
    );
}
