use std::io::Cursor;

use planloop::bench::{run_corpus, run_task, BackendChoice, RunOptions};
use planloop::transcript::{read_records, write_records};
use planloop::{BenchReport, BenchTask};
use planloop_core::world::EnvKind;
use planloop_core::{build_service_env, generate_corpus, Fault, OracleConfig, Variant};

fn tasks(n: usize) -> Vec<BenchTask> {
    generate_corpus(&build_service_env(), n, 5).unwrap().iter().map(BenchTask::from).collect()
}

fn options(variant: Variant, reps: usize, p_fail: f64) -> RunOptions {
    let mut o = RunOptions::new(EnvKind::Service, variant);
    o.repetitions = reps;
    o.p_fail = Some(p_fail);
    o.corpus_seed = 5;
    o.workers = 4;
    o
}

#[test]
fn transcripts_round_trip_through_jsonl() {
    let oracle = OracleConfig::default().with_fault(Fault::OmitMoveBeforeGrasp).recovering();
    let records = run_corpus(&tasks(6), &options(Variant::Full, 2, 0.3), &BackendChoice::Oracle(oracle)).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let lines = records.iter().map(|r| r.transcript.interactions.len() + 2).sum::<usize>();
    assert_eq!(text.lines().count(), lines);
    assert!(text.lines().next().unwrap().starts_with("{\"type\":\"header\""));
    let back = read_records(Cursor::new(buf)).unwrap();
    assert_eq!(back, records);
}

#[test]
fn truncated_files_are_rejected() {
    let records =
        run_corpus(&tasks(1), &options(Variant::Plan, 1, 0.0), &BackendChoice::Oracle(OracleConfig::default())).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(read_records(Cursor::new(cut)).is_err());
    assert!(read_records(Cursor::new("not json\n")).is_err());
}

#[test]
fn worker_count_does_not_change_results() {
    let t = tasks(10);
    let mut one = options(Variant::Fb, 3, 0.1);
    one.workers = 1;
    let many = options(Variant::Fb, 3, 0.1);
    let a = run_corpus(&t, &one, &BackendChoice::Oracle(OracleConfig::default().recovering())).unwrap();
    let b = run_corpus(&t, &many, &BackendChoice::Oracle(OracleConfig::default().recovering())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metrics_are_consistent_with_transcripts() {
    let records = run_corpus(&tasks(12), &options(Variant::Fb, 3, 0.1), &BackendChoice::Oracle(OracleConfig::default()))
        .unwrap();
    let report = BenchReport::from_records(&records);
    let row = &report.rows[0];
    let interactions: usize = records.iter().map(|r| r.transcript.interactions.len()).sum();
    assert!((row.execution_calls.mean * records.len() as f64 - interactions as f64).abs() < 1e-9);
    let executor_tokens: u64 = records
        .iter()
        .flat_map(|r| &r.transcript.interactions)
        .map(|i| i.generation.tokens_out)
        .sum();
    assert!((row.tokens_output.mean * records.len() as f64 - executor_tokens as f64).abs() < 1e-6);
    for r in &records {
        let bound = (r.config.timeout_factor * r.transcript.plan.len() as f64).ceil() as u64;
        assert!(r.transcript.metrics.execution_calls <= bound);
        assert_eq!(r.transcript.metrics.execution_calls as usize, r.transcript.interactions.len());
        assert_eq!(r.transcript.succeeded(), r.task.goal.holds_in(&r.transcript.final_state));
    }
}

#[test]
fn open_loop_feedback_is_always_done() {
    let records =
        run_corpus(&tasks(20), &options(Variant::Eo, 1, 0.5), &BackendChoice::Oracle(OracleConfig::default())).unwrap();
    for r in &records {
        assert_eq!(r.transcript.metrics.execution_calls, 4);
        assert!(r.transcript.interactions.iter().filter_map(|i| i.feedback.as_ref()).all(|f| f.is_done()));
    }
}

#[test]
fn report_json_round_trips() {
    let records =
        run_corpus(&tasks(5), &options(Variant::Plan, 3, 0.1), &BackendChoice::Oracle(OracleConfig::default())).unwrap();
    let json = BenchReport::from_records(&records).to_json();
    let parsed: BenchReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.to_json(), json);
}

#[test]
fn seeds_differ_by_task_and_repetition() {
    let t = tasks(3);
    let o = options(Variant::Full, 1, 0.0);
    let choice = BackendChoice::Oracle(OracleConfig::default());
    let a = run_task(&t[0], 0, 0, &o, &choice).unwrap();
    let b = run_task(&t[0], 0, 1, &o, &choice).unwrap();
    let c = run_task(&t[1], 1, 0, &o, &choice).unwrap();
    assert_ne!(a.config.seed, b.config.seed);
    assert_ne!(a.config.seed, c.config.seed);
    assert_eq!(a.task.instruction, t[0].instructions[0]);
    assert_eq!(b.task.instruction, t[0].instructions[1]);
}
