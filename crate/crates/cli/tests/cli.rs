use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn neurocomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurocomp")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_verb() {
    let o = neurocomp(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for verb in ["train", "eval", "transfer", "scale-test", "oracle", "train-data", "ablate"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn oracle_writes_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&["oracle", "--level", "3", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["task.json", "trace.json", "tree.dot", "steps.jsonl", "oracle.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(json(&dir.path().join("oracle.json"))["matches_trace"], Value::Bool(true));
}

#[test]
fn eval_of_reference_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        neurocomp(&["eval", "--kind", "plan", "--samples", "40", "--max-level", "8", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e = json(&dir.path().join("eval.json"));
    assert_eq!(e["report"]["correct"], e["report"]["samples"]);
    assert!(dir.path().join("eval.csv").exists());
}

#[test]
fn train_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&["train", "--task", "search", "--seed", "7", "--budget", "3", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seed = dir.path().join("seed7");
    for f in ["run.jsonl", "run.csv", "summary.json", "genome_initial.bin", "genome_final.bin"] {
        assert!(seed.join(f).exists(), "{f}");
    }
    assert_eq!(json(&seed.join("summary.json"))["iterations"], 3);
    assert_eq!(std::fs::read_to_string(seed.join("run.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn flags_override_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let preset = dir.path().join("p.json");
    std::fs::write(&preset, r#"{"kind":"train-plan","seeds":[1,2],"nes":{"budget":50}}"#).unwrap();
    let out = dir.path().join("run");
    let o = neurocomp(&[
        "train",
        "--config",
        preset.to_str().unwrap(),
        "--seed",
        "3",
        "--budget",
        "2",
        "--out",
        &out_arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("seed3").join("summary.json"));
    assert_eq!(s["iterations"], 2);
    assert_eq!(s["kind"], "plan");
    assert!(!out.join("seed1").exists());
}

#[test]
fn ablation_creates_one_directory_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&["ablate", "--variants", "full,soft-attention", "--budget", "1", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("full/seed1/summary.json").exists());
    assert!(dir.path().join("soft-attention/seed1/summary.json").exists());
}

#[test]
fn transfer_to_the_puzzle_runs_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&[
        "transfer",
        "--domain",
        "puzzle",
        "--kind",
        "plan",
        "--samples",
        "20",
        "--max-level",
        "6",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(&dir.path().join("transfer.json"));
    assert_eq!(t["eval"]["correct"], t["eval"]["samples"]);
}

#[test]
fn scale_test_solves_a_long_task() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&["scale-test", "--domain", "sokoban8", "--min-steps", "300", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("scale.json"));
    assert_eq!(s["tasks"][0]["solved"], true);
    assert!(s["tasks"][0]["trace_steps"].as_u64().unwrap() >= 300);
}

#[test]
fn failed_data_training_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurocomp(&["train-data", "--modules", "transform", "--max-batches", "1", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&dir.path().join("summary.json"))["success"], false);
}

#[test]
fn bad_input_is_an_error() {
    assert!(!neurocomp(&["ablate", "--variants", "no-such-variant"]).status.success());
    assert!(!neurocomp(&["eval", "--config", "/nonexistent/preset.json"]).status.success());
    assert!(!neurocomp(&["eval", "--genome", "/nonexistent/genome.bin"]).status.success());
    assert!(!neurocomp(&["train", "--domain", "chess", "--budget", "1"]).status.success());
}
