use std::path::Path;
use std::process::{Command, Output};

fn spatialkg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatialkg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "seed = 3\nout_dir = \"out\"\nvariants = 1\nholdout_fraction = 0.3\n\n[builder]\nscenes = 3\nskgs_per_scene = 3\n";

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nvariants = 0\n");
    let out = spatialkg(dir.path(), &["--config", &cfg, "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(dir.path(), "seed = 1\nno_such_key = 4\n");
    assert_eq!(spatialkg(dir.path(), &["--config", &cfg, "run"]).status.code(), Some(2));
}

#[test]
fn stage_without_upstream_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = spatialkg(dir.path(), &["--config", &cfg, "solve"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs a completed build-skg"));
}

#[test]
fn run_stats_sample_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);

    let out = spatialkg(d, &["--config", &cfg, "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("out/dataset/train.json").is_file());
    assert!(d.join("out/dataset/holdout.json").is_file());

    // a second run resumes every stage
    let again = String::from_utf8(spatialkg(d, &["--config", &cfg, "run"]).stdout).unwrap();
    assert_eq!(again.lines().filter(|l| l.contains("resumed")).count(), 7, "{again}");

    let out = spatialkg(d, &["--config", &cfg, "stats", "--top", "5"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(d.join("out/reports/objects.csv")).unwrap();
    assert!(csv.starts_with("rank,label,count\n"));

    let out = spatialkg(d, &["--config", &cfg, "--seed", "3", "sample", "--size", "10", "--output", "sub.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sub: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(d.join("sub.json")).unwrap()).unwrap();
    assert_eq!(sub.len(), 10);

    let hold: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/dataset/holdout.json")).unwrap()).unwrap();
    let answers: String = hold
        .iter()
        .map(|h| format!("{}\n", serde_json::json!({"question_id": h["id"], "raw_text": h["answer_key"]})))
        .collect();
    std::fs::write(d.join("answers.jsonl"), answers).unwrap();
    let out = spatialkg(d, &["--config", &cfg, "score", "--answers", "answers.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
}

#[test]
fn unknown_filter_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), "[]").unwrap();
    let out = spatialkg(dir.path(), &["sample", "--size", "1", "--filter", "bogus", "--input", "t.json", "--output", "o.json"]);
    assert_eq!(out.status.code(), Some(1));
}
