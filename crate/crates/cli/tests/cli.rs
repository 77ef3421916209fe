use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riskprof(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskprof"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = riskprof(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn gen_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["gen", "--mode", "same-ev", "--n", "2000", "--seed", "7", "--csv"]);
    }
    for name in ["same-ev.jsonl", "same-ev.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read_to_string(a.path().join("same-ev.jsonl")).unwrap().lines().count(), 2000);
}

#[test]
fn gen_without_seed_fails() {
    let d = tempfile::tempdir().unwrap();
    let out = riskprof(d.path(), &["gen", "--mode", "four", "--n", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert!(!d.path().join("four.jsonl").exists());
}

#[test]
fn bad_config_exits_nonzero() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "[generator]\np_range = [0.9, 0.1]\n").unwrap();
    let out = riskprof(d.path(), &["--config", cfg.to_str().unwrap(), "gen", "--mode", "diff-ev", "--n", "5", "--seed", "1"]);
    assert!(!out.status.success());
    assert!(!d.path().join("diff-ev.jsonl").exists());
}

#[test]
fn fit_on_crra_data_picks_crra() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    ok(dir, &["gen", "--mode", "diff-ev", "--n", "1000", "--seed", "3"]);
    let qs = path(dir, "diff-ev.jsonl");
    ok(dir, &["simulate", "--questions", &qs, "--target", "crra-0.71", "--seed", "4"]);
    let out = ok(
        dir,
        &[
            "fit", "--questions", &qs, "--choices", &path(dir, "choices.jsonl"), "--train", "800",
            "--families", "linear,crra", "--chains", "4", "--draws", "300", "--tune", "300", "--seed", "5",
        ],
    );
    assert!(out.contains("best: CRRA"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("fits.json")).unwrap()).unwrap();
    assert_eq!(report["train"], 800);
    assert_eq!(report["results"].as_array().unwrap().len(), 2);
    let board = fs::read_to_string(dir.join("leaderboard.csv")).unwrap();
    assert!(board.lines().nth(1).unwrap().starts_with("1,CRRA,ok,"), "{board}");

    let out = ok(dir, &["eval", "--questions", &qs, "--fits", &path(dir, "fits.json"), "--labels", &path(dir, "choices.jsonl")]);
    assert!(out.starts_with("accuracy"));
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(e["n"], 1000);
    assert!(e["accuracy"].as_f64().unwrap() > 0.8);
}

const LINEAR_ARGMAX: &str = r#"
[target]
model = { utility = { family = "linear" }, beta_sensitivity = inf }
"#;

#[test]
fn survey_gl_argmax_linear_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("linear.toml");
    fs::write(&cfg, LINEAR_ARGMAX).unwrap();
    let mut logs = Vec::new();
    for sub in ["a", "b"] {
        let dir = d.path().join(sub);
        let out = ok(&dir, &["--config", cfg.to_str().unwrap(), "survey-gl", "--seed", "1", "--repeats", "3"]);
        assert!(out.contains("mean 26.00 (sd 0.00) Average"), "{out}");
        let summary = fs::read_to_string(dir.join("gl_summary.csv")).unwrap();
        assert_eq!(summary.lines().nth(1).unwrap(), "all,3,0,26.0000,0.0000,Average");
        logs.push(fs::read(dir.join("gl_responses.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(String::from_utf8_lossy(&logs[0]).lines().count(), 1 + 13 * 3);
}

#[test]
fn survey_resumes_without_duplicates() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cfg = dir.join("linear.toml");
    fs::write(&cfg, LINEAR_ARGMAX).unwrap();
    let c = cfg.to_str().unwrap();
    ok(dir, &["--config", c, "survey-dospert", "--seed", "2", "--repeats", "1"]);
    ok(dir, &["--config", c, "survey-dospert", "--seed", "2", "--repeats", "2"]);
    let log = fs::read_to_string(dir.join("dospert_responses.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 60 * 2);
    assert_eq!(log.lines().filter(|l| l.starts_with("model_id")).count(), 1);
    let radar = fs::read_to_string(dir.join("dospert_radar.csv")).unwrap();
    assert_eq!(radar.lines().count(), 1 + 10);
}

#[test]
fn emitters_and_calibration() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    ok(dir, &["gen", "--mode", "diff-ev", "--n", "200", "--seed", "9"]);
    let qs = path(dir, "diff-ev.jsonl");
    ok(dir, &["emit-dpo", "--questions", &qs, "--target", "cara-2", "--beta", "1"]);
    for line in fs::read_to_string(dir.join("dpo.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["chosen", "prompt", "rejected"]);
    }
    ok(dir, &["emit-sft", "--questions", &qs, "--target", "prospect", "--beta", "0.05", "--label-mode", "argmax", "--seed", "1"]);
    assert_eq!(fs::read_to_string(dir.join("sft.jsonl")).unwrap().lines().count(), 200);

    ok(dir, &["calibrate-beta", "--target", "crra-1", "--n", "1000", "--eval-n", "500", "--seed", "1"]);
    let cal: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("calibration.json")).unwrap()).unwrap();
    let row = &cal[0];
    assert_eq!(row["target"], "crra-1");
    assert!((row["expected_accuracy"].as_f64().unwrap() - 0.9431).abs() < 1e-3);

    ok(dir, &["export-curves", "--target", "crra-0.71", "--target", "cara-2", "--points", "50"]);
    let curves = fs::read_to_string(dir.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 100);
    let last: Vec<&str> = curves.lines().nth(50).unwrap().split(',').collect();
    assert_eq!(last[0], "crra-0.71");
    assert_eq!(last[3], "1");
}
