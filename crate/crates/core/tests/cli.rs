use std::path::Path;
use std::process::{Command, Output};

fn stagebank(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stagebank"))
        .args(args)
        .current_dir(cwd)
        .env("STAGEBANK_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    stdout
}

const SMALL: &str = "seeds = [0]\n\
[stream]\nnum_stages = 3\nclasses_per_stage = 3\nfeature_dim = 6\ntrain_per_class = 20\ntest_per_class = 10\n\
[optimizer]\nepochs = 5\nbatch_size = 16\n";

#[test]
fn synth_run_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();

    let out = stagebank(&["synth", "--config", "small.toml", "--seed", "4", "--mode", "xdcil", "--out", "data"], d);
    assert!(ok(&out).contains("wrote 3 stages"));
    assert!(d.join("data/manifest.txt").exists());

    // top-level keys must precede the first table
    let cfg = format!("manifest = \"data/manifest.txt\"\n{SMALL}");
    std::fs::write(d.join("files.toml"), cfg).unwrap();
    let out = stagebank(&["run", "--config", "files.toml", "--seed", "1", "--seed", "2", "--out", "res"], d);
    let text = ok(&out);
    assert!(text.contains("FAA"), "{text}");
    let report = std::fs::read_to_string(d.join("res/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    stagebank::harness::report::validate_report(&v).unwrap();
    assert_eq!(v["mode"], "xdcil");
    assert_eq!(v["entries"][0]["seeds"].as_array().unwrap().len(), 2);

    let out = stagebank(
        &["predict", "--bank", "res/run-seed1.bank", "--input", "data/stage2_test.esnf", "--out", "pred"],
        d,
    );
    assert!(ok(&out).contains("30 predictions"));
    let csv = std::fs::read_to_string(d.join("pred/predictions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,stage_id,label,chosen_stage,chosen_class"));
    assert_eq!(csv.lines().count(), 31);

    let out = stagebank(&["run", "--config", "files.toml", "--mode", "cil"], d);
    assert!(!out.status.success());
}

#[test]
fn sweep_and_ablate_accept_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let out = stagebank(
        &["sweep-delta", "--config", "small.toml", "--deltas", "-10,-5", "--lambda", "0.2", "--psi", "0.01:1:0.01", "--out", "sw"],
        d,
    );
    assert!(ok(&out).contains("FAA spread"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("sw/report.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["energy"]["lambda"], 0.2);
    assert_eq!(v["entries"].as_array().unwrap().len(), 2);

    let out = stagebank(&["ablate", "--config", "small.toml", "--epochs", "2", "--batch", "8", "--out", "ab"], d);
    let text = ok(&out);
    for label in ["full", "no_anchor_loss", "no_calibration", "shared_head"] {
        assert!(text.contains(label), "{text}");
    }
    let out = stagebank(&["run", "--config", "small.toml", "--disable-calibration", "--delta", "-5", "--out", "nc"], d);
    ok(&out);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("nc/report.json")).unwrap()).unwrap();
    assert_eq!(v["entries"][0]["seeds"][0]["omega_size"], 0);
    assert_eq!(v["entries"][0]["energy"]["anchor"], -5.0);
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = stagebank(&["gradcheck", "--instances", "20", "--seed", "5"], dir.path());
    assert!(ok(&out).contains("20 instances"));
}

#[test]
fn bad_config_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "seeds = [0]\n[energy]\nlambda = \"high\"\n").unwrap();
    let out = stagebank(&["run", "--config", "bad.toml"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");

    std::fs::write(d.join("neg.toml"), "[energy]\nlambda = -1.0\n").unwrap();
    let out = stagebank(&["run", "--config", "neg.toml"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let out = stagebank(&["run", "--psi", "1:0"], d);
    assert!(!out.status.success());
}
