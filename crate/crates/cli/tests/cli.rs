use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn robustrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustrl")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_passes_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = robustrl(&["check", "--out", a.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.lines().count() >= 9);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    let second = robustrl(&["check", "--quiet", "--out", b.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    assert!(second.stdout.is_empty());
    assert_eq!(fs::read(a.join("check.json")).unwrap(), fs::read(b.join("check.json")).unwrap());
}

#[test]
fn oracle_matches_golden_file() {
    let out = robustrl(&["oracle", fixture("two_state.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let got: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let want: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("two_state_oracle.golden.json")).unwrap()).unwrap();
    assert_eq!(got["policy"], want["policy"]);
    assert_eq!(got["constrained"], want["constrained"]);
    let flat = |v: &serde_json::Value, key: &str| -> Vec<f64> {
        let x = &v[key];
        let items: Vec<serde_json::Value> = match x.as_array().unwrap().first() {
            Some(serde_json::Value::Array(_)) => x.as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).collect(),
            _ => x.as_array().unwrap().clone(),
        };
        items.iter().map(|y| y.as_f64().unwrap()).collect()
    };
    for key in ["value", "q_table"] {
        let (g, w) = (flat(&got, key), flat(&want, key));
        assert_eq!(g.len(), w.len());
        for (a, b) in g.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-9, "{key}: {a} vs {b}");
        }
    }
}

#[test]
fn malformed_config_names_the_path() {
    for cmd in ["evaluate", "train", "sweep"] {
        let out = robustrl(&[cmd, fixture("malformed.json").to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(stderr(&out).contains("region.radius"), "{}", stderr(&out));
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(robustrl(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(robustrl(&["check", "--bogus"]).status.code(), Some(2));
    assert_eq!(robustrl(&[]).status.code(), Some(2));
    let missing = robustrl(&["evaluate", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn evaluate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("lake.json");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = robustrl(&["evaluate", cfg.to_str().unwrap(), "--quiet", "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        outputs.push((fs::read(out_dir.join("report.json")).unwrap(), fs::read(out_dir.join("episodes.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let report: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 4);
    assert!(report["chosen_radius"].is_number());
    let csv = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "seed,episode,phase,cumulative_reward");
    assert_eq!(csv.lines().count(), 1 + 4 * 20);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustrl(&[
        "train",
        fixture("lake.json").to_str().unwrap(),
        "--seed",
        "7",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let models: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("models.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = models["agents"].as_array().unwrap().iter().map(|a| a["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![7, 9]);
}

#[test]
fn sweep_writes_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustrl(&["sweep", fixture("lake.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let sweep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["scores"].as_array().unwrap().len(), 2);
    assert_eq!(sweep["folds"].as_array().unwrap().len(), 10);
}
