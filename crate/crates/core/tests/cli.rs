use std::path::Path;
use std::process::{Command, Output};

fn odpp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odpp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"seed = 3

[grid]
nx = 5
ny = 5

[mcmc]
burn_in = 50
keep = 100

[data]
points = "sim/points.csv"
covariates = "sim/covariates.csv"
pairs = "sim/pairs.csv"

[validate]
widths = [1, 2]
regions_per_width = 10

[simulate]
kind = "pairs"
beta = [5.0, 0.5, 0.0]
recovery_prob = 0.5
"#;

#[test]
fn malformed_csv_reports_line_and_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let sim = odpp(dir.path(), &["--config", "run.toml", "simulate", "--out-dir", "sim"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    std::fs::write(dir.path().join("sim/points.csv"), "id,x,y\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
    let out = odpp(dir.path(), &["--config", "run.toml", "select-covariates"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("points.csv:3"), "{msg}");
    assert!(msg.contains("oops"), "{msg}");
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nbogus = 2\n").unwrap();
    let out = odpp(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn bad_override_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = odpp(dir.path(), &["--set", "mcmc.keep=-3", "simulate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_input_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let out = odpp(dir.path(), &["--config", "run.toml", "fit-theft"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn pipeline_writes_manifests_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("run.toml"), SMALL).unwrap();
    for args in [
        &["--config", "run.toml", "simulate", "--out-dir", "sim"][..],
        &["--config", "run.toml", "fit-theft", "--out-dir", "theft"],
        &["--config", "run.toml", "validate", "--out-dir", "val"],
        &["--config", "run.toml", "fit-conditional", "--out-dir", "cond"],
        &["--config", "run.toml", "predict-recovery", "--fit-dir", "cond", "--out-dir", "cond"],
    ] {
        let out = odpp(root, args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    for f in [
        "sim/points.csv",
        "sim/pairs.csv",
        "theft/chain.jsonl",
        "theft/surface.csv",
        "theft/manifest.json",
        "val/validation_scores.csv",
        "cond/recovery_scores.csv",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("theft/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit-theft");
    assert_eq!(manifest["seed"], 3);
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());

    let scores = std::fs::read_to_string(root.join("val/validation_scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next(), Some("w,pic,rps_sum"));
    assert_eq!(lines.count(), 2);
}
