use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "stream": "gauss2d-3",
  "mode": "align_combined",
  "alpha": 0.5,
  "seed": 4,
  "replay": { "steps_per_task": 6, "batch_size": 8, "critic_steps": 1, "log_every": 3 },
  "model": { "generator_hidden": 8, "critic_tap_width": 8, "critic_hidden": 8,
             "encoder_hidden": 8, "feature_critic_hidden": 8, "classifier_hidden": 8 },
  "eval": { "samples_per_condition": 50, "classifier": { "steps": 20 } }
}"#;

const GLYPHS: &str = r#"{
  "stream": { "name": "glyphs8", "tasks": 5 },
  "mode": "align_image",
  "replay": { "steps_per_task": 3, "batch_size": 8, "critic_steps": 1 },
  "model": { "generator_hidden": 8, "critic_tap_width": 8, "critic_hidden": 8,
             "encoder_hidden": 8, "feature_critic_hidden": 8, "classifier_hidden": 8 },
  "eval": { "samples_per_condition": 100, "classifier": { "steps": 20 } }
}"#;

fn featreplay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featreplay"))
        .args(args)
        .env_remove("FEATREPLAY_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_prints_the_materialized_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", TINY);
    let out = featreplay(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["replay"]["alpha"], 0.5);
    assert_eq!(v["replay"]["lambda_base"], 1e-3);
    assert_eq!(v["stream"]["tasks"], 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config_hash"));
}

#[test]
fn env_overrides_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_featreplay"))
        .args(["validate", "--config", &cfg])
        .env("FEATREPLAY_REPLAY__STEPS_PER_TASK", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["replay"]["steps_per_task"], 9);
}

#[test]
fn run_writes_artifacts_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = featreplay(&["run", "--config", &cfg, "--out", s(d), "--quiet"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["metrics.csv", "ledger.json", "report.json", "tasks.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    for t in 1..=3 {
        assert!(a.join(format!("checkpoints/task_{t}.ckpt")).is_file());
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.lines().next().unwrap().starts_with("config_hash"));
    assert!(metrics.lines().count() > 3);
    assert_eq!(fs::read(a.join("ledger.json")).unwrap(), fs::read(b.join("ledger.json")).unwrap());
    let strip = |d: &Path| {
        let mut v: Value = serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v
    };
    let report = strip(&a);
    assert_eq!(report, strip(&b));
    assert_eq!(report["tasks"].as_array().unwrap().len(), 3);
    assert!(report["forgetfulness"]["overall_fs"].is_number());

    let other = featreplay(&["run", "--config", &cfg, "--seed", "5", "--out", s(&a), "--quiet"]);
    assert_eq!(other.status.code(), Some(3), "a directory holding another config is refused");
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", TINY);
    let blocker = write(tmp.path(), "blocker", "not a directory");
    let out = featreplay(&["run", "--config", &cfg, "--out", &blocker, "--quiet"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_3_with_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    for (name, text) in [
        ("unknown.json", r#"{"stream": "gauss2d-3", "replay": {"bogus": 1}}"#),
        ("alpha.json", r#"{"stream": "gauss2d-3", "mode": "align_feature", "alpha": 0.3}"#),
        ("broken.json", "{not json"),
    ] {
        let cfg = write(tmp.path(), name, text);
        let out = featreplay(&["run", "--config", &cfg, "--out", s(&out_dir), "--quiet"]);
        assert_eq!(out.status.code(), Some(3), "{name}");
        let err: Value = serde_json::from_slice(&fs::read(out_dir.join("error.json")).unwrap()).unwrap();
        assert_eq!(err["kind"], "config", "{name}");
    }
    let missing = featreplay(&["validate", "--config", s(&tmp.path().join("absent.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn dump_writes_glyph_samples_and_checks_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.json", GLYPHS);
    let run_dir = tmp.path().join("run");
    let out = featreplay(&["run", "--config", &cfg, "--out", s(&run_dir), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run_dir.join("checkpoints/task_5.ckpt");
    let samples = tmp.path().join("samples");
    let out = featreplay(&[
        "dump", "--checkpoint", s(&ckpt), "--config", &cfg, "--n", "100", "--out", s(&samples), "--quiet",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for c in 0..5 {
        let text = fs::read_to_string(samples.join(format!("samples_condition_{c}.csv"))).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 2 + 64);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 100);
        for r in rows {
            let cells: Vec<&str> = r.split(',').collect();
            assert_eq!(cells[1], c.to_string());
            for v in &cells[2..] {
                let x: f64 = v.parse().unwrap();
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    let other = write(tmp.path(), "other.json", &GLYPHS.replace("align_image", "none"));
    let out = featreplay(&[
        "dump", "--checkpoint", s(&ckpt), "--config", &other, "--out", s(&samples), "--quiet",
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(samples.join("error.json").is_file());
}

#[test]
fn sweep_compares_every_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TINY.replacen("\"seed\": 4,", "\"seed\": 4, \"sweep\": {\"alpha\": [0.0, 1.0]},", 1);
    let cfg = write(tmp.path(), "s.json", &text);
    let dir = tmp.path().join("sweep");
    let out = featreplay(&["sweep", "--config", &cfg, "--out", s(&dir), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.join("alpha_0/report.json").is_file());
    assert!(dir.join("alpha_1/report.json").is_file());

    let empty = TINY.replacen("\"seed\": 4,", "\"seed\": 4, \"sweep\": {\"alpha\": []},", 1);
    let cfg = write(tmp.path(), "e.json", &empty);
    let out = featreplay(&["sweep", "--config", &cfg, "--out", s(&dir), "--quiet"]);
    assert_eq!(out.status.code(), Some(3));
}
