use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn viewlet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewlet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn temp(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("viewlet-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

#[test]
fn compile_matches_checked_in_dumps() {
    for (sql, dump) in [
        ("order_lineitem.sql", "order_lineitem.dump"),
        ("q18.sql", "q18.dump"),
    ] {
        let o = viewlet(&["compile", path(&golden(sql))]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(
            text(&o),
            std::fs::read_to_string(golden(dump)).unwrap(),
            "{}",
            sql
        );
    }
    let dump = std::fs::read_to_string(golden("order_lineitem.dump")).unwrap();
    assert_eq!(dump.lines().filter(|l| l.starts_with("ON ")).count(), 4);
}

#[test]
fn depth_zero_dump_has_one_statement_per_trigger() {
    let o = viewlet(&[
        "compile",
        path(&golden("order_lineitem.sql")),
        "--depth",
        "0",
    ]);
    let out = text(&o);
    assert!(out.contains("VIEWS 1\n"));
    assert_eq!(
        out.lines()
            .filter(|l| l.contains(" := ") && l.starts_with("  0"))
            .count(),
        4
    );
}

#[test]
fn run_prints_the_worked_table() {
    let r = format!("R={}", path(&golden("count_product_r.gmr")));
    let s = format!("S={}", path(&golden("count_product_s.gmr")));
    let o = viewlet(&[
        "run",
        path(&golden("count_product.sql")),
        path(&golden("count_product.stream")),
        "--load",
        &r,
        "--load",
        &s,
        "--snapshot-every",
        "1",
        "--check-oracle",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = text(&o);
    let values: Vec<&str> = out.lines().filter(|l| l.starts_with("|->")).collect();
    assert_eq!(values, ["|-> 6", "|-> 8", "|-> 12", "|-> 15", "|-> 18"]);
}

#[test]
fn empty_stream_prints_only_the_initial_snapshot() {
    let empty = temp("empty.stream", "");
    let o = viewlet(&["run", path(&golden("order_lineitem.sql")), path(&empty)]);
    assert!(o.status.success());
    assert_eq!(text(&o), "# after 0 events\n");
}

#[test]
fn exit_codes() {
    assert_eq!(viewlet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(viewlet(&["compile"]).status.code(), Some(1));
    assert_eq!(viewlet(&["--help"]).status.code(), Some(0));
    let bad = temp(
        "bad.sql",
        "CREATE STREAM R(a int); SELECT sum(R.zz) FROM R;",
    );
    let o = viewlet(&["compile", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let malformed = temp("bad.stream", "+\tO\t1\t2\t3\n+\tLI\tx\t1\n");
    let o = viewlet(&["run", path(&golden("order_lineitem.sql")), path(&malformed)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = viewlet(&[
        "compile",
        path(&golden("order_lineitem.sql")),
        "--optimizer",
        "cost",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn injected_fault_is_reported_as_divergence() {
    let stream = temp(
        "ex2.stream",
        "+\tO\t1\t7\t2\n+\tLI\t1\t5\n+\tLI\t1\t3\n+\tO\t2\t7\t1\n",
    );
    let ok = viewlet(&[
        "run",
        path(&golden("order_lineitem.sql")),
        path(&stream),
        "--check-oracle",
    ]);
    assert!(ok.status.success());
    let o = viewlet(&[
        "run",
        path(&golden("order_lineitem.sql")),
        path(&stream),
        "--check-oracle",
        "--inject-fault",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divergence at event 2"));
}

#[test]
fn bench_is_deterministic_apart_from_timing() {
    let args = [
        "bench",
        "--queries",
        "Q11,VWAP",
        "--modes",
        "depth0,optimized",
        "--events",
        "400",
        "--runs",
        "1",
        "--no-warmup",
        "--seed",
        "5",
        "--scale",
        "0.05",
        "--active-orders",
        "20",
    ];
    let strip = |o: &Output| -> Vec<String> {
        text(o)
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                format!("{} {} {}", f[0], f[1], f[2])
            })
            .collect()
    };
    let a = viewlet(&args);
    let b = viewlet(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a).len(), 5);
    assert!(strip(&a)[1..].iter().all(|l| l.ends_with(" 400")));
}
