use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tbsim::engine::MetricsReport;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn tbsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbsim"))
        .args(args)
        .env_remove(tbsim::cli::OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbsim(&["run", "--config", s(&fixture("fig4_batched.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = MetricsReport::load(dir.path().join("report.json")).unwrap();
    assert_eq!(r.local_ratio, 1.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("cycles="));
}

#[test]
fn trace_flag_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbsim(&["run", "--config", s(&fixture("fig9.json")), "--out", s(dir.path()), "--trace"]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["requests.csv", "dispatch.csv", "issue.csv", "page_table.csv", "bank_counters.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn missing_config_is_a_fault() {
    let o = tbsim(&["run", "--config", "/nonexistent/config.json", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn schema_violation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        format!(r#"{{ "workload": "{}", "shceduler": {{}} }}"#, s(&fixture("fig4_workload.json"))),
    )
    .unwrap();
    let o = tbsim(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("shceduler"), "{}", stderr(&o));
}

#[test]
fn truncated_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbsim(&["run", "--config", s(&fixture("short_horizon.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(MetricsReport::load(dir.path().join("report.json")).unwrap().truncated);
}

#[test]
fn env_var_sets_default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tbsim"))
        .args(["run", "--config", s(&fixture("fig4_batched.json"))])
        .env(tbsim::cli::OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn seed_flag_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = fixture("mixed_plain.json");
    tbsim(&["run", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]);
    tbsim(&["run", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    let (ra, rb) = (
        MetricsReport::load(a.join("report.json")).unwrap(),
        MetricsReport::load(b.join("report.json")).unwrap(),
    );
    // The seed perturbs the CPU injector.
    assert_ne!(ra, rb);
}

#[test]
fn profile_fig4_gives_stride_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbsim(&[
        "profile",
        "--config",
        s(&fixture("fig4_workload.json")),
        "--page-size",
        "4096",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan = tbsim::batching::BatchPlan::load(dir.path().join("plan.json")).unwrap();
    assert_eq!(plan.stride, 2);
    assert!(fs::read_to_string(dir.path().join("sharing.csv")).unwrap().starts_with("distance,pages,fraction"));
}

#[test]
fn profile_zero_access_kernel_fails() {
    let dir = tempfile::tempdir().unwrap();
    let wl = dir.path().join("empty.json");
    let text = fs::read_to_string(fixture("fig4_workload.json"))
        .unwrap()
        .replace(r#""accesses_per_thread": 1"#, r#""accesses_per_thread": 0"#);
    assert!(text.contains(r#""accesses_per_thread": 0"#));
    fs::write(&wl, text).unwrap();
    let o = tbsim(&["profile", "--config", s(&wl), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no memory accesses"));
}

#[test]
fn profile_warns_on_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let wl = dir.path().join("wide.json");
    // Every block touches every page: nothing can be separated.
    fs::write(
        &wl,
        r#"{ "kernel": { "name": "wide", "grid_dim": { "x": 8 }, "block_dim": { "x": 32 }, "warp_size": 32,
             "matrices": [ { "base_addr": 0, "element_size": 4096, "row_len": 256,
                             "mapping_kind": "Interleaved", "accesses_per_thread": 1 } ] } }"#,
    )
    .unwrap();
    let o = tbsim(&["profile", "--config", s(&wl), "--page-size", "1048576", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    assert!(dir.path().join("plan.json").exists());
}

fn write_experiment(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.json");
    fs::write(&p, body).unwrap();
    p
}

fn read_csv(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn compare_normalizes_to_ccws() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(
        dir.path(),
        &format!(
            r#"{{ "name": "two", "base": "{}",
                 "axes": [ {{ "path": "scheduler.policy", "values": ["TbasE", "Ccws"] }} ] }}"#,
            s(&fixture("fig9.json"))
        ),
    );
    let out = dir.path().join("out");
    let o = tbsim(&["compare", "--config", s(&exp), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = out.join("two").join("summary.csv");
    let mut rdr = csv::Reader::from_path(&summary).unwrap();
    let header = rdr.headers().unwrap().clone();
    let rows = read_csv(&summary);
    assert_eq!(rows.len(), 2);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    // Baseline is the CCWS cell even though it is listed second.
    assert_eq!(&rows[1][col("baseline")], "true");
    assert_eq!(&rows[1][col("rbhr_norm")], "1.000000");
    let e: f64 = rows[0][col("rbhr")].parse().unwrap();
    let c: f64 = rows[1][col("rbhr")].parse().unwrap();
    let norm: f64 = rows[0][col("rbhr_norm")].parse().unwrap();
    assert!((norm - e / c).abs() < 1e-6);
    // Every row points at an on-disk report with the same numbers.
    for r in &rows {
        let rep = MetricsReport::load(out.join("two").join(&r[col("report")])).unwrap();
        assert_eq!(rep.cycles.to_string(), r[col("cycles")]);
    }
    let long = read_csv(&out.join("two").join("long.csv"));
    assert_eq!(long.len(), 2 * MetricsReport::metric_names().len());
}

#[test]
fn compare_cross_product_and_rerun_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(
        dir.path(),
        &format!(
            r#"{{ "name": "grid", "base": "{}",
                 "axes": [ {{ "path": "allocator", "values": ["LocalFirstTouch", "Coloring", "ColoringHetero"] }},
                           {{ "path": "scheduler.policy", "values": ["Ccws", "TbasE"] }} ] }}"#,
            s(&fixture("fig4_batched.json"))
        ),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(tbsim(&["compare", "--config", s(&exp), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(tbsim(&["compare", "--config", s(&exp), "--out", s(&b)]).status.code(), Some(0));
    assert_eq!(read_csv(&a.join("grid/summary.csv")).len(), 6);
    for f in ["summary.csv", "long.csv"] {
        assert_eq!(
            fs::read(a.join("grid").join(f)).unwrap(),
            fs::read(b.join("grid").join(f)).unwrap(),
            "{f} differs between reruns"
        );
    }
}

#[test]
fn failed_cell_is_marked_and_failed_baseline_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let body = |baseline: u32| {
        format!(
            r#"{{ "name": "broken", "base": "{}",
                 "axes": [ {{ "path": "hardware.num_sms", "values": [0, 2] }} ],
                 "baseline": {{ "hardware.num_sms": {baseline} }} }}"#,
            s(&fixture("fig4_batched.json"))
        )
    };
    let exp = write_experiment(dir.path(), &body(2));
    let out = dir.path().join("ok");
    let o = tbsim(&["compare", "--config", s(&exp), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_csv(&out.join("broken/summary.csv"));
    assert_eq!(&rows[0][3], "failed");
    assert_eq!(&rows[1][3], "ok");

    let exp = write_experiment(dir.path(), &body(0));
    let o = tbsim(&["compare", "--config", s(&exp), "--out", s(&dir.path().join("bad"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.path().join("bad/broken/summary.csv").exists());
}

#[test]
fn oversized_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(
        dir.path(),
        &format!(
            r#"{{ "name": "big", "base": "{}", "max_cells": 3,
                 "axes": [ {{ "path": "seed", "values": [1, 2, 3, 4] }} ] }}"#,
            s(&fixture("fig4_batched.json"))
        ),
    );
    let o = tbsim(&["compare", "--config", s(&exp), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("max_cells"));
}

#[test]
fn validate_accepts_fixtures_and_rejects_bad_layout() {
    for f in ["fig4_batched.json", "fig9_workload.json", "mixed_hetero.json", "experiments/schedulers.json"] {
        let o = tbsim(&["validate", "--config", s(&fixture(f))]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", stderr(&o));
    }
    let o = tbsim(&["validate", "--config", s(&fixture("invalid_layout.json"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("page_offset_bits"));
}
