use std::path::PathBuf;
use std::process::Command;

fn bmac() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bmac"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bmac-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn solve_then_check() {
    let dir = scratch("solve");
    let out = bmac()
        .args(["solve", "--preset", "ic3", "--seed", "4", "--solver", "pr1", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let half_steps = summary["summary"]["half_steps"].as_u64().unwrap() as usize;
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), half_steps + 1);
    assert!(trace.starts_with("half_step,iteration,half,sum_power"));

    let check = bmac().arg("check").arg(dir.join("summary.json")).output().unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));
    let report: serde_json::Value = serde_json::from_slice(&check.stdout).unwrap();
    assert!(report["max_residual"].as_f64().unwrap() <= 1e-6);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn same_seed_same_output() {
    let once = || {
        bmac()
            .args(["solve", "--preset", "fig2-orderA", "--seed", "11", "--solver", "pr"])
            .output()
            .unwrap()
            .stdout
    };
    let (a, b) = (once(), once());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn batch_writes_one_row_per_seed() {
    let dir = scratch("batch");
    let out = bmac()
        .args(["batch", "--preset", "ic3", "--solver", "prd", "--rounds", "3.5", "--beta", "1.05", "--seeds", "5", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(dir.join("seeds.csv")).unwrap();
    assert_eq!(rows.lines().count(), 6);
    let batch: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("batch.json")).unwrap()).unwrap();
    assert_eq!(batch["runs"], 5);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_input_fails_cleanly() {
    let out = bmac().args(["solve", "--preset", "nope"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    let out = bmac().args(["solve"]).output().unwrap();
    assert!(!out.status.success());
}
