use std::path::Path;
use std::process::{Command, Output};

fn jd3net(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jd3net"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn search_finds_the_base_network() {
    let dir = tempfile::tempdir().unwrap();
    let o = jd3net(dir.path(), &["search", "--budget-gflops", "128", "--rho", "1.2"]);
    assert!(o.status.success());
    let cfg = &stdout_json(&o)["best"]["config"];
    assert_eq!(
        (cfg["d"].as_u64(), cfg["w"].as_u64(), cfg["B"].as_u64()),
        (Some(4), Some(128), Some(152))
    );
}

#[test]
fn usage_errors_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = jd3net(
        dir.path(),
        &["search", "--budget-gflops", "25", "--bogus", "--out", "x.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    let o = jd3net(dir.path(), &["mosaic", "--in", "missing.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = jd3net(dir.path(), &["search", "--budget-gflops", "0.001"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "infeasible");

    let o = jd3net(dir.path(), &["flops", "--arch", "3,64,64", "--c-in", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = jd3net(dir.path(), &["demosaic", "--in", "nope.png", "--out", "y.png"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"budget_gflops": 25, "rho": "0.5"}"#).unwrap();
    let o = jd3net(
        dir.path(),
        &["--config", "c.json", "search", "--rho", "1.0", "--out", "r.json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["best"]["config"]["w"], 64);
}

#[test]
fn gradcheck_all_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = jd3net(dir.path(), &["gradcheck", "--all"]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["failed"], 0);
}

#[test]
fn reference_report_has_twenty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = jd3net(dir.path(), &["report", "--reference-table", "--out", "rep"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}
