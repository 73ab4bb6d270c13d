//! Exit-code contract and config-echo round trips for the binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_vsrstab"))
        .args(args)
        .output()
        .expect("spawning the workbench binary")
        .status
        .code()
        .expect("binary was signal-killed")
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("vsrstab-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn help_and_version_exit_clean() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["example", "--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
}

#[test]
fn config_errors_use_the_usage_code() {
    let dir = scratch("usage-errors");
    let out = dir.to_str().unwrap();
    assert_eq!(run(&["nonsense"]), 64);
    assert_eq!(run(&["certify", "--mode", "weird", "--out-dir", out]), 64);
    assert_eq!(run(&["simulate", "--x0", "1,banana"]), 64);
    assert_eq!(run(&["falsify", "--out-dir", out]), 64);
    assert_eq!(run(&["certify", "--mode", "siss", "--out-dir", out]), 64);
    assert_eq!(run(&["simulate", "--model", "noidea:x1", "--out-dir", out]), 64);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn certified_example_exits_zero() {
    let dir = scratch("example-ok");
    let code = run(&[
        "example",
        "--x-points",
        "201",
        "--e-points",
        "11",
        "--t-points",
        "8",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let files = dir_bytes(&dir);
    assert!(files.contains_key("example.json"));
    assert!(files.contains_key("coefficients.csv"));
    let csv = std::str::from_utf8(&files["coefficients.csv"]).unwrap();
    assert!(csv.starts_with("arg,value\n"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn violated_decrease_exits_one() {
    let dir = scratch("identity-violation");
    let code = run(&[
        "certify",
        "--model",
        "identity",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    let files = dir_bytes(&dir);
    assert!(files.contains_key("sandwich.json"));
    assert!(files.contains_key("certification.json"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_writes_the_trajectory_csv() {
    let dir = scratch("simulate");
    let code = run(&[
        "simulate",
        "--K-steps",
        "7",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let files = dir_bytes(&dir);
    let csv = std::str::from_utf8(&files["trajectory.csv"]).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,t,x1,e1,T"));
    assert_eq!(lines.count(), 8);
    std::fs::remove_dir_all(&dir).ok();
}

/// Re-feeding the resolved-config echo with no extra flags must reproduce
/// every output byte for byte, echo included.
#[test]
fn resolved_config_round_trips() {
    let first = scratch("echo-first");
    let second = scratch("echo-second");
    let code = run(&[
        "certify",
        "--M",
        "0.8",
        "--T-bound",
        "0.04",
        "--grid",
        "9,9,8",
        "--lhs-samples",
        "64",
        "--seed",
        "11",
        "--out-dir",
        first.to_str().unwrap(),
    ]);
    let config = first.join("resolved_config.json");
    let code2 = run(&[
        "certify",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code, code2);
    assert_eq!(dir_bytes(&first), dir_bytes(&second));
    std::fs::remove_dir_all(&first).ok();
    std::fs::remove_dir_all(&second).ok();
}

#[test]
fn witness_replay_matches_the_search_report() {
    let base = scratch("witness");
    let claim = base.join("claim.json");
    std::fs::write(
        &claim,
        r#"{"type": "envelope", "beta": "s * exp(-t)", "M0": 1.0, "T_bound": 0.05}"#,
    )
    .unwrap();
    let code = run(&[
        "falsify",
        "--model",
        "euler:x1",
        "--claim",
        claim.to_str().unwrap(),
        "--restarts",
        "4",
        "--K-steps",
        "50",
        "--out-dir",
        base.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    let witness = base.join("witness.json");
    assert!(witness.exists());
    let replay = run(&[
        "simulate",
        "--model",
        "euler:x1",
        "--witness",
        witness.to_str().unwrap(),
        "--out-dir",
        base.to_str().unwrap(),
    ]);
    assert_eq!(replay, 0);
    let w: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&witness).unwrap()).unwrap();
    let k = w["violation"]["k"].as_u64().unwrap() as usize;
    let lhs = w["violation"]["lhs"].as_f64().unwrap();
    let csv = std::fs::read_to_string(base.join("trajectory.csv")).unwrap();
    let row = csv.lines().nth(1 + k).unwrap();
    let x: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(x.abs(), lhs, "replayed state norm differs from the witness record");
    std::fs::remove_dir_all(&base).ok();
}
