use std::path::Path;
use std::process::{Command, Output};

fn npde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npde"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# provenance: config_hash="));
    lines.skip(1).map(str::to_string).collect()
}

#[test]
fn limit_writes_one_row_per_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = npde(&["limit", "--sigmas", "1.5,1.999"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.path().join("limit.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("1.999"));
}

#[test]
fn barrier_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = npde(&["barrier", "--n", "1", "--sigma0", "0.5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&dir.path().join("barrier.csv")).len(), 1);
    let verify = data_rows(&dir.path().join("verify.csv"));
    assert!(!verify.is_empty());
    assert!(verify.iter().all(|r| r.ends_with("true")));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[kernel]\nsigma = 1.2\n[grid]\nn = 1\nh = 0.0625\n[experiment]\nfunction = \"tent\"\n").unwrap();
    let out = npde(&["eval", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("grid=n=1;h=0.0625"));
    assert!(text.lines().next().unwrap().contains("sigma=1.2"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(npde(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(npde(&["eval", "--function", "nope"], dir.path()).status.code(), Some(1));
    assert_eq!(npde(&["limit", "--sigmas", "1.5,2.5"], dir.path()).status.code(), Some(1));
}

#[test]
fn contract_violations_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = npde(&["eval", "--lambda", "2", "--Lambda", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(npde(&["limit", "--sigmas", "1.9,1.5"], dir.path()).status.code(), Some(2));
}
