use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_planloop"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("PLANLOOP_BASE_URL").env_remove("PLANLOOP_MODEL").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_corpus_with_oracle_succeeds() {
    let o = run(&["run-corpus", "--variant", "full", "--backend", "oracle", "--p-fail", "0", "--reps", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("| Architecture | Success rate | Execution calls | Tokens output |"));
    assert!(out.contains("| Full | 100.00 ± 0.00 | 4.00 ± 0.00 |"), "{out}");
}

#[test]
fn committed_corpus_matches_the_generator() {
    let o = run(&["gen-corpus", "--n", "50", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(fixture("corpus.json")).unwrap());
}

#[test]
fn golden_report_is_reproducible_from_a_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = run(&[
        "run-corpus",
        "--corpus",
        fixture("small_corpus.json").to_str().unwrap(),
        "--variant",
        "all",
        "--reps",
        "3",
        "--seed",
        "11",
        "--backend",
        "oracle",
        "--fault",
        "omit_move_before_grasp",
        "--recover",
        "--p-fail",
        "0.1",
        "--workers",
        "3",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(report).unwrap(), std::fs::read_to_string(fixture("golden_report.json")).unwrap());
}

#[test]
fn report_and_replay_reproduce_the_golden_files() {
    let transcripts = fixture("golden_transcripts.jsonl");
    let t = transcripts.to_str().unwrap();
    let md = run(&["report", "--transcripts", t]);
    assert_eq!(stdout(&md), std::fs::read_to_string(fixture("golden_report.md")).unwrap());
    let json = run(&["report", "--transcripts", t, "--format", "json"]);
    assert_eq!(stdout(&json), std::fs::read_to_string(fixture("golden_report.json")).unwrap());
    let replay = run(&["replay", "--transcripts", t]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(stdout(&replay), stdout(&md));
}

#[test]
fn replay_detects_a_tampered_prompt_record() {
    let text = std::fs::read_to_string(fixture("golden_transcripts.jsonl")).unwrap();
    // Change the first recorded prompt hash so its completion can no longer be found.
    let at = text.find("\"prompt_hash\":\"").unwrap() + "\"prompt_hash\":\"".len();
    let mut tampered = text.clone();
    tampered.replace_range(at..at + 4, "ffff");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, tampered).unwrap();
    let o = run(&["replay", "--transcripts", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn verify_chain_fixtures() {
    let ok = run(&["verify-chain", "--chain", fixture("gtsg_chains.json").to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout(&ok).lines().count(), 51);
    let bad = run(&["verify-chain", "--chain", fixture("charger_unparameterized.json").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("call 1: charger is grasped by the wrong part"));
}

#[test]
fn classify_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let transcripts = dir.path().join("t.jsonl");
    let o = run(&[
        "run-corpus",
        "--n",
        "4",
        "--variant",
        "plan",
        "--reps",
        "1",
        "--backend",
        "oracle",
        "--fault",
        "omit_move_before_grasp",
        "--transcripts",
        transcripts.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let c = run(&["classify", "--transcripts", transcripts.to_str().unwrap(), "--corpus", fixture("corpus.json").to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0));
    let csv = stdout(&c);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("task_id,architecture,repetition,label,evidence"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",Plan,0,MissingSubgoal,")), "{csv}");
}

#[test]
fn run_task_variants() {
    let o = run(&["run-task", "--instruction", "Move the Fork to the Desk. It is on the Table.", "--backend", "oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"]["kind"], "success");
    assert_eq!(v["execution_calls"], 4);

    let o = run(&["run-task", "--env", "industrial", "--task-id", "taskboard", "--variant", "full", "--backend", "oracle"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"]["kind"], "success");
    assert_eq!(v["execution_calls"], 5);
}

#[test]
fn usage_errors_exit_2() {
    let missing_backend = run(&["run-task", "--task-id", "task-000", "--backend", "http"]);
    assert_eq!(missing_backend.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing_backend.stderr).contains("missing backend config"));

    assert_eq!(run(&["run-task", "--task-id", "task-000"]).status.code(), Some(2));
    assert_eq!(run(&["run-corpus", "--backend", "oracle", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["report", "--transcripts", "/nonexistent/file.jsonl"]).status.code(), Some(2));
    assert_eq!(run(&["run-corpus", "--backend", "oracle", "--variant", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["run-corpus", "--backend", "oracle", "--p-fail", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["--config", "/nonexistent.json", "report", "--transcripts", "x"]).status.code(), Some(2));
    assert_eq!(run(&["run-task", "--instruction", "Dance", "--backend", "oracle"]).status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"p_fail": 0.0, "seed": 7}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "run-corpus", "--variant", "plan", "--backend", "oracle", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("| Plan | 100.00 ± 0.00 | 4.00 ± 0.00 |"), "{out}");
    assert!(out.contains("- grasp failure probability: 0\n"));
}

#[test]
fn catalog_exports_environment_and_skills() {
    let o = run(&["catalog", "--env", "industrial"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["environment"]["kind"], "industrial");
    let names: Vec<&str> = v["skills"]["primitives"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["grasp", "press_button", "plug_in", "place_in_rack", "open_trapdoor"]);
}
