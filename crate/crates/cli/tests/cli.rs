use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ncp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncp")).args(args).output().expect("spawn ncp")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const CLS: &str = r#"{"task": "classification", "generator": {"kind": "classification", "k": 5, "d": 10},
    "score": "hps", "noise": {"kind": "uniform-flip", "epsilon": 0.1}, "alpha": [0.1, 0.2],
    "n_cal": 200, "n_test": 200, "trials": 4, "seed": 3, "bounds": ["random-flip"]}"#;

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CLS);
    let out = dir.path().join("run");
    let o = ncp(&["simulate", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--trials", "3", "--jobs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(csv.lines().next().unwrap().contains("bound.random-flip-upper"));
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 3);
}

#[test]
fn seed_override_changes_output_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CLS);
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = ncp(&["simulate", "--config", &cfg, "--seed", seed, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("trials.csv")).unwrap()
    };
    let a = run("10", "a");
    assert_eq!(a, run("10", "b"));
    assert_ne!(a, run("11", "c"));
}

#[test]
fn calibrate_quantile_matches_rank_rule() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.csv");
    let body: String = std::iter::once("score\n".to_string()).chain((1..=9).map(|i| format!("{i}\n"))).collect();
    std::fs::write(&p, body).unwrap();
    // n = 9, alpha = 0.2: rank ceil(10 * 0.8) = 8.
    let o = ncp(&["calibrate", p.to_str().unwrap(), "--alpha", "0.2"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["qhat"], 8.0);
    // alpha = 0.05 needs rank 10 > n, so the threshold is infinite.
    let o = ncp(&["calibrate", p.to_str().unwrap(), "--alpha", "0.05"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["qhat"].is_null());
}

#[test]
fn calibrate_crc_picks_smallest_feasible_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("loss.csv");
    // Loss 1 below each point's cutoff, 0 from it on.
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let cut = [0.25, 0.25, 0.5, 0.5, 0.5, 0.5, 0.75, 0.75, 1.0];
    let mut body = grid.map(|g| g.to_string()).join(",") + "\n";
    for c in cut {
        body += &(grid.map(|g| if g < c { "1" } else { "0" }).join(",") + "\n");
    }
    std::fs::write(&p, body).unwrap();
    let out = dir.path().join("crc.json");
    let o = ncp(&["calibrate", p.to_str().unwrap(), "--alpha", "0.3", "--mode", "crc", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    // (9R + 1)/10 <= 0.3 needs R <= 2/9: at 0.75 R = 1/9, at 0.5 R = 3/9.
    assert_eq!(v["lambda"], 0.75);
    assert_eq!(v["n"], 9);
}

#[test]
fn calibrate_crc_infeasible_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("loss.csv");
    std::fs::write(&p, "0,1\n1,1\n1,1\n").unwrap();
    let o = ncp(&["calibrate", p.to_str().unwrap(), "--alpha", "0.1", "--mode", "crc"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bounds_from_stdin_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("req.json");
    std::fs::write(&p, r#"{"bound": "sandwich", "alpha": 0.1, "n": 99, "u": 0.05}"#).unwrap();
    let o = ncp(&["bounds", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["inputs"]["n"], 99);

    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_ncp"))
        .args(["bounds", "-"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&std::fs::read(&p).unwrap()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&o.stdout).unwrap(), v);
}

#[test]
fn bad_bound_request_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("req.json");
    std::fs::write(&p, r#"{"bound": "nope"}"#).unwrap();
    assert_eq!(ncp(&["bounds", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn online_writes_streams_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("online");
    let o = ncp(&["online", "--steps", "500", "--streams", "2", "--noise", "gauss:0.3", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = std::fs::read_to_string(out.join("online_stream_1.csv")).unwrap();
    assert_eq!(s.lines().next().unwrap(), "t,theta,loss_noisy,loss_clean,mc_noisy,mc_clean");
    assert_eq!(s.lines().count(), 501);
    let v: Value = serde_json::from_slice(&std::fs::read(out.join("online_summary.json")).unwrap()).unwrap();
    assert!(v["max_drift"].as_f64().unwrap() >= 0.0);
}

#[test]
fn online_rejects_bad_noise() {
    assert_eq!(ncp(&["online", "--steps", "10", "--noise", "gauss"]).status.code(), Some(2));
    assert_eq!(ncp(&["online", "--steps", "10", "--noise", "weird:1"]).status.code(), Some(2));
}

#[test]
fn attack_writes_noisy_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"task": "classification", "generator": {"kind": "classification", "k": 4, "d": 6},
            "score": "hps", "noise": {"kind": "adversarial", "attack": "w2r", "epsilon": 0.1}, "alpha": 0.1,
            "n_train": 200, "n_cal": 100, "n_test": 100, "trials": 1, "seed": 4}"#,
    );
    let out = dir.path().join("atk");
    let o = ncp(&["attack", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(out.join("attacked.csv")).unwrap();
    let h = rd.headers().unwrap().clone();
    assert_eq!(h.len(), 6 + 2);
    let flips = rd.records().map(|r| r.unwrap()).filter(|r| r[6] != r[7]).count();
    let v: Value = serde_json::from_slice(&std::fs::read(out.join("attack.json")).unwrap()).unwrap();
    assert!((v["achieved_rate"].as_f64().unwrap() - flips as f64 / 100.0).abs() < 1e-12);
    assert!(flips <= 10);
}

#[test]
fn gen_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CLS);
    let out = dir.path().join("data.csv");
    let o = ncp(&["gen", "--config", &cfg, "--n", "25", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rd.headers().unwrap().iter().filter(|h| h.starts_with('x')).count(), 10);
    assert_eq!(rd.records().count(), 25);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"task": "classification", "seed": 1, "bogus": true}"#);
    assert_eq!(ncp(&["simulate", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(ncp(&["simulate"]).status.code(), Some(2));
    assert_eq!(ncp(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn too_many_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"task": "classification", "generator": {"kind": "classification", "k": 4, "d": 6},
            "score": "hps", "noise": {"kind": "rare-to-frequent", "epsilon": 0.1}, "alpha": 0.1,
            "n_train": 0, "n_cal": 50, "n_test": 50, "trials": 3, "seed": 4}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(ncp(&["simulate", "--config", &cfg, "--out-dir", out.to_str().unwrap()]).status.code(), Some(4));
}
