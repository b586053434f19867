use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_committee-match"))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).to_string_lossy().into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_then_verify_single() {
    let sol = scratch("single.json");
    let o = run(&["solve-single", &data("two_rankings.json"), "--school", "h", "-o", sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["verify", &data("two_rankings.json"), sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"ok\": true"));
}

#[test]
fn tampered_solution_fails_verification() {
    let sol = scratch("tampered.json");
    run(&["solve-single", &data("two_rankings.json"), "--school", "h", "-o", sol.to_str().unwrap()]);
    let text = std::fs::read_to_string(&sol).unwrap();
    // drop the first member of the selection and put b and c in instead
    let bad = text.replace("\"a\",\n    \"b\"\n  ],\n  \"schools\"", "\"b\",\n    \"c\"\n  ],\n  \"schools\"")
        .replace("\"a\",\n    \"c\"\n  ],\n  \"schools\"", "\"b\",\n    \"c\"\n  ],\n  \"schools\"");
    assert_ne!(bad, text);
    std::fs::write(&sol, bad).unwrap();
    let o = run(&["verify", &data("two_rankings.json"), sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_then_verify_market() {
    let sol = scratch("market.json");
    let o = run(&["solve-match", &data("aligned_market.json"), "-o", sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["verify", &data("aligned_market.json"), sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["oracle", "stable", &data("aligned_market.json"), "--solution", sol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).is_empty());
}

#[test]
fn io_errors_exit_three_with_json() {
    let o = run(&["--json", "solve-match", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn strict_mode_rejects_unknown_fields() {
    let path = scratch("extra.json");
    let text = std::fs::read_to_string(data("two_rankings.json")).unwrap().replacen("{", "{\n  \"note\": \"x\",", 1);
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(run(&["--strict", "oracle", "min-beta", p, "--school", "h"]).status.code(), Some(3));
    let o = run(&["oracle", "min-beta", p, "--school", "h"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("note"));
}

#[test]
fn unknown_school_is_a_validation_error() {
    assert_eq!(run(&["solve-single", &data("two_rankings.json"), "--school", "nope"]).status.code(), Some(3));
}

#[test]
fn non_convergence_exits_two() {
    let o = run(&["solve-single", &data("non_substitutable.json"), "--school", "h", "--max-iter", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_queries() {
    let o = run(&["oracle", "min-beta", &data("condorcet_cycle.json"), "--school", "h"]);
    assert_eq!(stdout(&o).trim(), "2");
    let o = run(&["--json", "oracle", "acceptable", &data("non_substitutable.json"), "--school", "h", "--applicants", "a,b,c"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["selected"], serde_json::json!(["a", "b"]));
}

#[test]
fn gen_is_reproducible() {
    let args = ["gen", "--students", "9", "--schools", "2", "--members", "3", "--capacity", "4", "--alpha-mode", "percentile:0.5", "--seed", "11"];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&run(&args)));
    let too_big = run(&["gen", "--students", "40", "--members", "1", "--capacity", "2", "--oracle-compatible"]);
    assert_eq!(too_big.status.code(), Some(3));
}

#[test]
fn bench_reports_are_byte_identical() {
    let a = run(&["bench", "--trials", "100", "--seed", "7"]);
    let b = run(&["bench", "--trials", "100", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().last().unwrap().starts_with("summary:"));
}
