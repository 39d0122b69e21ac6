use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pedset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pedset")).args(args).env_remove("PEDSET_SEED").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn gen_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.odgt");
    let b = dir.path().join("b.odgt");
    let c = dir.path().join("c.odgt");
    for (file, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let out = pedset(&["--seed", seed, "gen", "--images", "20", "--output", path(file)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stats = json(&out);
        assert_eq!(stats["images"], 20);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 20);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_ne!(text, fs::read_to_string(&c).unwrap());
}

#[test]
fn seed_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let flag = dir.path().join("flag.odgt");
    let env = dir.path().join("env.odgt");
    assert!(pedset(&["--seed", "3", "gen", "--images", "5", "--output", path(&flag)]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_pedset"))
        .args(["gen", "--images", "5", "--output", path(&env)])
        .env("PEDSET_SEED", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&flag).unwrap(), fs::read(&env).unwrap());
}

#[test]
fn gen_then_augment_with_audit() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes.odgt");
    let crops = dir.path().join("crops.odgt");
    assert!(pedset(&["gen", "--images", "30", "--output", path(&scenes)]).status.success());
    let out = pedset(&["--seed", "4", "augment", "-i", path(&scenes), "-o", path(&crops), "--copies", "3", "--audit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert_eq!(summary["crops"], 90);
    assert!(summary["min_retention"].as_f64().unwrap() >= 0.8);
    let lines = fs::read_to_string(&crops).unwrap();
    assert_eq!(lines.lines().count(), 90);
    assert!(lines.lines().next().unwrap().contains("#crop0"));
}

fn write_predictions_from(gts: &Path, preds: &Path) {
    let mut out = String::new();
    for line in fs::read_to_string(gts).unwrap().lines() {
        let record: Value = serde_json::from_str(line).unwrap();
        for b in record["gtboxes"].as_array().unwrap() {
            let entry = serde_json::json!({ "image_id": record["ID"], "score": 0.9, "box": b["fbox"] });
            out.push_str(&entry.to_string());
            out.push('\n');
        }
    }
    fs::write(preds, out).unwrap();
}

#[test]
fn eval_scores_ground_truth_as_a_perfect_detector() {
    let dir = tempfile::tempdir().unwrap();
    let gts = dir.path().join("gts.odgt");
    let preds = dir.path().join("preds.jsonl");
    let report = dir.path().join("report.json");
    assert!(pedset(&["gen", "--images", "10", "--output", path(&gts)]).status.success());
    write_predictions_from(&gts, &preds);
    let out = pedset(&["eval", "--preds", path(&preds), "--gts", path(&gts), "-o", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(metrics["AP"], 1.0);
    assert_eq!(metrics["recall"], 1.0);
    assert!(metrics["MR2"].as_f64().unwrap() < 1e-6);
}

#[test]
fn match_bench_reports_agreeing_costs() {
    let out = pedset(&["match-bench", "--instances", "5", "--n-pred", "60", "--n-gt", "20", "--repeats", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["summary"]["instances"], 5);
    assert_eq!(report["summary"]["cost_mismatches"], 0);

    let csv = pedset(&["match-bench", "--instances", "3", "--n-pred", "30", "--n-gt", "10", "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("instance_id,N_q,N_g,k,time_exact_ns,time_fast_ns,certificate"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn decoder_sim_runs_the_gradient_check() {
    let out = pedset(&["decoder-sim", "--persons", "4", "--grid-size", "8", "--grad-check", "--full-layers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let losses = report["losses"].as_array().unwrap();
    assert_eq!(losses.len(), 2);
    assert_eq!(losses[0]["target"], "visible");
    assert_eq!(losses[1]["target"], "full");
    assert!(report["grad_check"]["max_rel_err"].as_f64().unwrap() < 1e-4);
    assert_eq!(report["self_attention"][1]["pairs"], 12 * 4);

    let again = pedset(&["decoder-sim", "--persons", "4", "--grid-size", "8", "--full-layers", "1"]);
    let first = json(&again);
    let second = json(&pedset(&["decoder-sim", "--persons", "4", "--grid-size", "8", "--full-layers", "1"]));
    assert_eq!(first, second);
}

#[test]
fn exit_codes_separate_usage_verification_and_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.odgt");

    assert_eq!(pedset(&["match-bench", "--k-candidates", "0"]).status.code(), Some(1));
    assert_eq!(pedset(&["decoder-sim", "--persons", "0"]).status.code(), Some(1));
    assert_eq!(pedset(&["--help"]).status.code(), Some(0));

    let failed = pedset(&["decoder-sim", "--persons", "3", "--grid-size", "6", "--grad-check", "--grad-tolerance", "0"]);
    assert_eq!(failed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("gradient check"));

    let out = pedset(&["eval", "--preds", path(&missing), "--gts", path(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}
