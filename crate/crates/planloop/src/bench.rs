//! Corpus runner and the aggregated report.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use planloop_core::gateway::Backends;
use planloop_core::orchestrator::NoClock;
use planloop_core::world::EnvKind;
use planloop_core::{
    derive_seed, run_episode, ChatBackend, Clock, EpisodeTask, EpisodeTranscript, OracleBackend, OracleConfig,
    OracleTask, Outcome, PipelineConfig, TokenMethod, Variant,
};
use serde::{Deserialize, Serialize};

use crate::corpus::{default_p_fail, environment, registry, BenchTask};
use crate::replay::ReplayBackend;
use crate::transcript::{EpisodeRecord, RunInfo};
use crate::SystemClock;

/// Where completions come from.
pub enum BackendChoice<'a> {
    /// A fresh rule-based oracle per episode, built from the task's chain.
    Oracle(OracleConfig),
    /// Shared, thread-safe backends (HTTP).
    Shared {
        planner: &'a (dyn ChatBackend + Sync),
        eo: &'a (dyn ChatBackend + Sync),
        executor: &'a (dyn ChatBackend + Sync),
    },
}

impl BackendChoice<'_> {
    pub fn name(&self) -> String {
        match self {
            BackendChoice::Oracle(c) => oracle_name(c),
            BackendChoice::Shared { planner, eo, executor } => {
                let names = [planner.name(), eo.name(), executor.name()];
                if names.iter().all(|n| *n == names[0]) {
                    names[0].clone()
                } else {
                    names.join("+")
                }
            }
        }
    }
}

pub fn oracle_name(c: &OracleConfig) -> String {
    let mut parts: Vec<&str> = c.faults.iter().map(|f| f.as_str()).collect();
    if c.recover_on_feedback {
        parts.push("recover");
    }
    if parts.is_empty() {
        "oracle".to_string()
    } else {
        format!("oracle[{}]", parts.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub env: EnvKind,
    pub variant: Variant,
    pub repetitions: usize,
    pub corpus_seed: u64,
    pub corpus_hash: Option<String>,
    /// Overrides the registry's grasp failure probability.
    pub p_fail: Option<f64>,
    pub timeout_factor: Option<f64>,
    pub workers: usize,
    /// Record wall time; off keeps transcripts byte-reproducible.
    pub wall_clock: bool,
}

impl RunOptions {
    pub fn new(env: EnvKind, variant: Variant) -> Self {
        Self {
            env,
            variant,
            repetitions: 3,
            corpus_seed: 0,
            corpus_hash: None,
            p_fail: None,
            timeout_factor: None,
            workers: 1,
            wall_clock: false,
        }
    }

    pub fn config(&self, seed: u64) -> PipelineConfig {
        let mut c = self.variant.config(seed);
        c.grasp_failure_prob = self.p_fail;
        if let Some(t) = self.timeout_factor {
            c.timeout_factor = t;
        }
        c
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("task {task}: {message}")]
    Task { task: String, message: String },
}

/// Runs one episode of `task` at `repetition`.
pub fn run_task(
    task: &BenchTask,
    index: usize,
    repetition: usize,
    opts: &RunOptions,
    backend: &BackendChoice<'_>,
) -> Result<EpisodeRecord, BenchError> {
    let env = environment(opts.env);
    let reg = registry(opts.env);
    let seed = derive_seed(opts.corpus_seed, &[index as u64, repetition as u64]);
    let config = opts.config(seed);
    let episode = EpisodeTask {
        id: task.id.clone(),
        instruction: task.instruction(repetition).to_string(),
        goal: task.goal.clone(),
        initial: task.initial.clone(),
        repetition,
    };
    let clock: Box<dyn Clock> = if opts.wall_clock { Box::new(SystemClock::new()) } else { Box::new(NoClock) };
    let transcript = match backend {
        BackendChoice::Oracle(oc) => {
            let otask = OracleTask::new(task.gtsg.clone(), &reg, &env, &task.initial)
                .map_err(|e| BenchError::Task { task: task.id.clone(), message: e.to_string() })?;
            let oracle = OracleBackend::new(oc.clone(), otask);
            run_episode(&episode, &env, &reg, &config, Backends::uniform(&oracle), clock.as_ref())
        }
        BackendChoice::Shared { planner, eo, executor } => {
            let backends = Backends { planner: *planner, eo: *eo, executor: *executor };
            run_episode(&episode, &env, &reg, &config, backends, clock.as_ref())
        }
    };
    Ok(EpisodeRecord {
        run: RunInfo { backend: backend.name(), corpus_seed: opts.corpus_seed, corpus_hash: opts.corpus_hash.clone() },
        env: opts.env,
        task: episode,
        gtsg: task.gtsg.clone(),
        config,
        transcript,
    })
}

/// Runs every task `opts.repetitions` times on a bounded worker pool.
/// Records come back ordered by repetition, then task.
pub fn run_corpus(
    tasks: &[BenchTask],
    opts: &RunOptions,
    backend: &BackendChoice<'_>,
) -> Result<Vec<EpisodeRecord>, BenchError> {
    let jobs: Vec<(usize, usize)> =
        (0..opts.repetitions).flat_map(|rep| (0..tasks.len()).map(move |i| (i, rep))).collect();
    let results: Mutex<Vec<Option<Result<EpisodeRecord, BenchError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, rep)) = jobs.get(j) else { break };
                let r = run_task(&tasks[i], i, rep, opts, backend);
                results.lock().expect("results lock")[j] = Some(r);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Runs a recorded episode again against its own recorded completions.
pub fn replay_record(record: &EpisodeRecord) -> EpisodeRecord {
    let env = environment(record.env);
    let reg = registry(record.env);
    let replay = ReplayBackend::new(record.transcript.generations());
    let transcript = run_episode(&record.task, &env, &reg, &record.config, Backends::uniform(&replay), &NoClock);
    EpisodeRecord { transcript, ..record.clone() }
}

/// Equality up to wall-clock time.
pub fn same_episode(a: &EpisodeTranscript, b: &EpisodeTranscript) -> bool {
    let strip = |t: &EpisodeTranscript| {
        let mut t = t.clone();
        t.metrics.wall_time_secs = 0.0;
        t
    };
    strip(a) == strip(b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub architecture: String,
    pub episodes: usize,
    pub repetitions: usize,
    /// Percent of episodes that reached the goal.
    pub success_rate: Stat,
    pub execution_calls: Stat,
    /// Tokens output by the execution module per episode.
    pub tokens_output: Stat,
    /// `reported`, `whitespace`, `mixed` or `none`.
    pub token_method: String,
    pub aborted: usize,
    pub planner_tokens: u64,
    pub eo_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// `None` when the episodes come from runs with different values.
    pub corpus_seed: Option<u64>,
    pub backend: String,
    pub p_fail: Option<f64>,
    pub corpus_hash: Option<String>,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

fn uniform<T: PartialEq + Clone>(mut it: impl Iterator<Item = T>) -> Option<T> {
    let first = it.next()?;
    it.all(|x| x == first).then_some(first)
}

fn row_order(label: &str) -> (usize, String) {
    let known = Variant::ALL.iter().position(|v| v.label() == label).unwrap_or(Variant::ALL.len());
    (known, label.to_string())
}

impl BenchReport {
    /// Aggregates episodes per architecture. Statistics are taken over
    /// repetition-level averages.
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let metadata = ReportMetadata {
            corpus_seed: uniform(records.iter().map(|r| r.run.corpus_seed)),
            backend: uniform(records.iter().map(|r| r.run.backend.clone()))
                .unwrap_or_else(|| if records.is_empty() { String::new() } else { "mixed".to_string() }),
            p_fail: uniform(records.iter().map(|r| r.config.grasp_failure_prob.unwrap_or(default_p_fail(r.env)))),
            corpus_hash: uniform(records.iter().map(|r| r.run.corpus_hash.clone())).flatten(),
            episodes: records.len(),
        };
        let labels: BTreeSet<(usize, String)> = records.iter().map(|r| row_order(&r.config.label)).collect();
        let rows = labels.into_iter().map(|(_, label)| row(&label, records)).collect();
        Self { metadata, rows }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Architecture | Success rate | Execution calls | Tokens output |\n");
        out.push_str("|---|---:|---:|---:|\n");
        let fmt = |s: &Stat| format!("{:.2} ± {:.2}", s.mean, s.std);
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.architecture,
                fmt(&r.success_rate),
                fmt(&r.execution_calls),
                fmt(&r.tokens_output)
            ));
        }
        let m = &self.metadata;
        out.push('\n');
        out.push_str(&format!("- episodes: {}\n", m.episodes));
        out.push_str(&format!("- backend: {}\n", if m.backend.is_empty() { "-" } else { &m.backend }));
        out.push_str(&format!("- corpus seed: {}\n", m.corpus_seed.map_or("mixed".to_string(), |s| s.to_string())));
        out.push_str(&format!("- corpus hash: {}\n", m.corpus_hash.as_deref().unwrap_or("-")));
        out.push_str(&format!("- grasp failure probability: {}\n", m.p_fail.map_or("mixed".to_string(), |p| p.to_string())));
        for r in &self.rows {
            out.push_str(&format!(
                "- {}: {} episodes over {} repetitions, {} aborted, token count {}, planner tokens {}, EO tokens {}\n",
                r.architecture, r.episodes, r.repetitions, r.aborted, r.token_method, r.planner_tokens, r.eo_tokens
            ));
        }
        out
    }
}

fn row(label: &str, records: &[EpisodeRecord]) -> ReportRow {
    let mine: Vec<&EpisodeRecord> = records.iter().filter(|r| r.config.label == label).collect();
    let reps: BTreeSet<usize> = mine.iter().map(|r| r.task.repetition).collect();
    let (mut success, mut calls, mut tokens) = (Vec::new(), Vec::new(), Vec::new());
    for rep in &reps {
        let group: Vec<&EpisodeTranscript> =
            mine.iter().filter(|r| r.task.repetition == *rep).map(|r| &r.transcript).collect();
        let n = group.len() as f64;
        success.push(100.0 * group.iter().filter(|t| t.succeeded()).count() as f64 / n);
        calls.push(group.iter().map(|t| t.metrics.execution_calls as f64).sum::<f64>() / n);
        tokens.push(group.iter().map(|t| t.metrics.tokens_out_total as f64).sum::<f64>() / n);
    }
    let mut methods: Vec<TokenMethod> = Vec::new();
    for i in mine.iter().flat_map(|r| &r.transcript.interactions) {
        if !methods.contains(&i.generation.token_method) {
            methods.push(i.generation.token_method);
        }
    }
    let token_method = match methods.as_slice() {
        [] => "none",
        [TokenMethod::Reported] => "reported",
        [TokenMethod::Whitespace] => "whitespace",
        _ => "mixed",
    }
    .to_string();
    ReportRow {
        architecture: label.to_string(),
        episodes: mine.len(),
        repetitions: reps.len(),
        success_rate: Stat::of(&success),
        execution_calls: Stat::of(&calls),
        tokens_output: Stat::of(&tokens),
        token_method,
        aborted: mine.iter().filter(|r| matches!(r.transcript.outcome, Outcome::Aborted { .. })).count(),
        planner_tokens: mine.iter().map(|r| r.transcript.metrics.planner_tokens).sum(),
        eo_tokens: mine.iter().map(|r| r.transcript.metrics.eo_tokens).sum(),
    }
}
