use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use planloop_core::world::{EnvKind, WorldState};
use planloop_core::{
    generate_corpus, ground_truth_chain, verify_chain, Fault, OracleBackend, OracleConfig,
    PrimitiveCall, TaskSpec, Variant,
};
use planloop::bench::{replay_record, run_task, same_episode, BackendChoice, RunOptions};
use planloop::config::FileConfig;
use planloop::corpus::{
    corpus_hash, corpus_json, environment, industrial_bench_tasks, read_corpus, registry, BenchTask,
};
use planloop::http::HttpBackend;
use planloop::labels::{label_records, write_csv};
use planloop::transcript::{read_file, write_records, EpisodeRecord};
use planloop::{run_corpus, BenchReport};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "planloop", version, about = "Plan, check and execute robot tasks with a chat model in the loop")]
struct Cli {
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pick-and-place corpus.
    GenCorpus(GenCorpusArgs),
    /// Run a single task.
    RunTask(RunTaskArgs),
    /// Run a corpus under one or more architectures and print the report.
    RunCorpus(RunCorpusArgs),
    /// Re-run recorded episodes from their own completions and check they match.
    Replay(ReplayArgs),
    /// Label failed episodes with their failure mode.
    Classify(ClassifyArgs),
    /// Check the chaining condition of primitive chains.
    VerifyChain(VerifyChainArgs),
    /// Aggregate transcripts into a report.
    Report(ReportArgs),
    /// Print an environment catalog and its skills manifest as JSON.
    Catalog(CatalogArgs),
}

#[derive(Args)]
struct CatalogArgs {
    #[arg(long, value_enum, default_value = "service")]
    env: EnvArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Service,
    Industrial,
}

impl From<EnvArg> for EnvKind {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Service => EnvKind::Service,
            EnvArg::Industrial => EnvKind::Industrial,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendKind {
    Oracle,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    /// Completion source.
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Oracle fault to inject (repeatable): omit_move_before_grasp,
    /// omit_grasp_part, emit_unparseable_once, omit_plan_step.
    #[arg(long = "fault", value_parser = parse_fault)]
    faults: Vec<Fault>,
    /// Let the oracle correct itself after error feedback.
    #[arg(long)]
    recover: bool,
}

#[derive(Args)]
struct RunSettings {
    /// Grasp failure probability (defaults to the environment's registry).
    #[arg(long)]
    p_fail: Option<f64>,
    #[arg(long)]
    timeout_factor: Option<f64>,
    /// Corpus seed; episode seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall time in transcripts.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, value_enum, default_value = "service")]
    env: EnvArg,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Replace instruction variants 1 and 2 with paraphrases from this backend.
    #[arg(long, value_enum)]
    paraphrase: Option<BackendKind>,
    #[arg(long, default_value_t = 2)]
    paraphrase_retries: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunTaskArgs {
    #[arg(long, value_enum, default_value = "service")]
    env: EnvArg,
    /// Free-form instruction naming the object, its location and the target.
    #[arg(long, conflicts_with = "task_id")]
    instruction: Option<String>,
    /// Task id from the corpus, or charger / probe / taskboard.
    #[arg(long, required_unless_present = "instruction")]
    task_id: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "full")]
    variant: Variant,
    /// Which instruction variant to use.
    #[arg(long, default_value_t = 0)]
    repetition: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    run: RunSettings,
    /// Write the transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct RunCorpusArgs {
    #[arg(long, value_enum, default_value = "service")]
    env: EnvArg,
    /// Corpus file; without it a corpus of --n tasks is generated from --seed.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Architecture (repeatable), or `all`.
    #[arg(long = "variant", value_parser = parse_variants, default_value = "full")]
    variants: Vec<Vec<Variant>>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    run: RunSettings,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the markdown report here.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, required = true, num_args = 1..)]
    transcripts: Vec<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, required = true, num_args = 1..)]
    transcripts: Vec<PathBuf>,
    /// Take ground-truth chains from this corpus instead of the transcripts.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyChainArgs {
    /// JSON chain file: one object or an array of
    /// {"env", "chain", optional "initial", optional "name"}.
    #[arg(long)]
    chain: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    transcripts: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Fault::parse(s).ok_or_else(|| format!("unknown fault `{s}`"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant `{s}` (cap, plan, eo, fb, full, ds-full)"))
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Variant::ALL.to_vec())
    } else {
        parse_variant(s).map(|v| vec![v])
    }
}

/// `Usage` exits with 2, `Failed` with 1.
enum CliError {
    Usage(String),
    Failed(String),
}

type CliResult = Result<(), CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = FileConfig::load_optional(cli.config.as_deref()).map_err(usage).and_then(|config| match cli.command {
        Command::GenCorpus(a) => gen_corpus(a, &config),
        Command::RunTask(a) => run_task_cmd(a, &config),
        Command::RunCorpus(a) => run_corpus_cmd(a, &config),
        Command::Replay(a) => replay_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::VerifyChain(a) => verify_chain_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Catalog(a) => catalog_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| failed(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(failed)
        }
    }
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<EpisodeRecord>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(usage(format!("{}: no such file", p.display())));
        }
        all.extend(read_file(p).map_err(|e| failed(format!("{}: {e}", p.display())))?);
    }
    Ok(all)
}

fn load_corpus(path: &Path) -> Result<Vec<TaskSpec>, CliError> {
    if !path.exists() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    read_corpus(path).map_err(failed)
}

struct HttpTrio {
    planner: HttpBackend,
    eo: HttpBackend,
    executor: HttpBackend,
}

impl HttpTrio {
    fn new(config: &FileConfig) -> Result<Self, CliError> {
        let make = |role| HttpBackend::new(config.role(role)).map_err(|e| usage(format!("missing backend config: {e}")));
        Ok(Self {
            planner: make(config.planner.as_ref())?,
            eo: make(config.eo.as_ref())?,
            executor: make(config.executor.as_ref())?,
        })
    }

    fn choice(&self) -> BackendChoice<'_> {
        BackendChoice::Shared { planner: &self.planner, eo: &self.eo, executor: &self.executor }
    }
}

fn oracle_config(args: &BackendArgs) -> OracleConfig {
    OracleConfig { faults: args.faults.clone(), recover_on_feedback: args.recover }
}

fn check_backend_flags(args: &BackendArgs) -> CliResult {
    if args.backend == BackendKind::Http && (!args.faults.is_empty() || args.recover) {
        return Err(usage("--fault and --recover only apply to --backend oracle"));
    }
    Ok(())
}

fn run_options(env: EnvKind, variant: Variant, run: &RunSettings, config: &FileConfig) -> RunOptions {
    let mut opts = RunOptions::new(env, variant);
    opts.corpus_seed = run.seed.or(config.seed).unwrap_or(7);
    opts.p_fail = run.p_fail.or(config.p_fail);
    opts.timeout_factor = run.timeout_factor.or(config.timeout_factor);
    opts.wall_clock = run.wall_clock;
    opts
}

fn validate_options(opts: &RunOptions) -> CliResult {
    opts.config(0).validate().map_err(usage)?;
    if let Some(p) = opts.p_fail {
        if !(0.0..=1.0).contains(&p) {
            return Err(usage(format!("--p-fail must be in [0, 1], got {p}")));
        }
    }
    Ok(())
}

fn gen_corpus(a: GenCorpusArgs, config: &FileConfig) -> CliResult {
    if matches!(a.env, EnvArg::Industrial) {
        return Err(usage("industrial tasks are fixed (charger, probe, taskboard); only the service corpus is generated"));
    }
    let env = environment(EnvKind::Service);
    let mut corpus = generate_corpus(&env, a.n, a.seed).map_err(failed)?;
    match a.paraphrase {
        None => {}
        Some(BackendKind::Oracle) => {
            let oracle = OracleBackend::without_task(OracleConfig::default());
            corpus = planloop_core::taskgen::paraphrase_corpus(&corpus, &oracle, a.paraphrase_retries).map_err(failed)?;
        }
        Some(BackendKind::Http) => {
            let backend = HttpBackend::new(config.role(None)).map_err(|e| usage(format!("missing backend config: {e}")))?;
            corpus = planloop_core::taskgen::paraphrase_corpus(&corpus, &backend, a.paraphrase_retries).map_err(failed)?;
        }
    }
    write_output(a.out.as_deref(), &corpus_json(&corpus))
}

fn find_task(a: &RunTaskArgs, env: EnvKind, seed: u64) -> Result<(usize, BenchTask), CliError> {
    let service = environment(EnvKind::Service);
    match (env, &a.instruction, &a.task_id) {
        (EnvKind::Service, Some(text), _) => planloop_core::taskgen::task_from_instruction(&service, text, seed)
            .map(|spec| (0, BenchTask::from(&spec)))
            .ok_or_else(|| usage("could not find an object, its location and a target location in the instruction")),
        (EnvKind::Industrial, Some(text), _) => industrial_bench_tasks()
            .into_iter()
            .enumerate()
            .find(|(_, t)| t.instructions.iter().any(|i| i == text))
            .ok_or_else(|| usage("industrial instructions must match one of the charger, probe or taskboard tasks")),
        (EnvKind::Service, None, Some(id)) => {
            let corpus = match &a.corpus {
                Some(p) => load_corpus(p)?,
                None => generate_corpus(&service, 50, seed).map_err(failed)?,
            };
            corpus
                .iter()
                .enumerate()
                .find(|(_, s)| &s.id == id)
                .map(|(i, s)| (i, BenchTask::from(s)))
                .ok_or_else(|| usage(format!("no task `{id}` in the corpus")))
        }
        (EnvKind::Industrial, None, Some(id)) => industrial_bench_tasks()
            .into_iter()
            .enumerate()
            .find(|(_, t)| &t.id == id)
            .ok_or_else(|| usage(format!("no industrial task `{id}` (charger, probe, taskboard)"))),
        (_, None, None) => Err(usage("give --instruction or --task-id")),
    }
}

fn run_task_cmd(a: RunTaskArgs, config: &FileConfig) -> CliResult {
    check_backend_flags(&a.backend)?;
    let env = EnvKind::from(a.env);
    let opts = run_options(env, a.variant, &a.run, config);
    validate_options(&opts)?;
    let (index, task) = find_task(&a, env, opts.corpus_seed)?;
    let http = match a.backend.backend {
        BackendKind::Http => Some(HttpTrio::new(config)?),
        BackendKind::Oracle => None,
    };
    let choice = http.as_ref().map_or_else(|| BackendChoice::Oracle(oracle_config(&a.backend)), HttpTrio::choice);
    let record = run_task(&task, index, a.repetition, &opts, &choice).map_err(failed)?;
    if let Some(p) = &a.transcript {
        let file = std::fs::File::create(p).map_err(|e| failed(format!("{}: {e}", p.display())))?;
        write_records(std::io::BufWriter::new(file), std::slice::from_ref(&record)).map_err(failed)?;
    }
    let t = &record.transcript;
    let summary = serde_json::json!({
        "task": record.task.id,
        "instruction": record.task.instruction,
        "architecture": record.config.label,
        "outcome": t.outcome,
        "plan": t.plan,
        "execution_calls": t.metrics.execution_calls,
        "tokens_output": t.metrics.tokens_out_total,
    });
    write_output(None, &format!("{}\n", serde_json::to_string_pretty(&summary).map_err(failed)?))
}

fn run_corpus_cmd(a: RunCorpusArgs, config: &FileConfig) -> CliResult {
    check_backend_flags(&a.backend)?;
    let env = EnvKind::from(a.env);
    let variants: Vec<Variant> = {
        let mut v: Vec<Variant> = a.variants.iter().flatten().copied().collect();
        v.dedup();
        v
    };
    let base = run_options(env, variants[0], &a.run, config);
    validate_options(&base)?;
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let (tasks, hash) = match env {
        EnvKind::Service => {
            let corpus = match &a.corpus {
                Some(p) => load_corpus(p)?,
                None => generate_corpus(&environment(env), a.n, base.corpus_seed).map_err(failed)?,
            };
            if corpus.is_empty() {
                return Err(usage("the corpus is empty"));
            }
            (corpus.iter().map(BenchTask::from).collect::<Vec<_>>(), Some(corpus_hash(&corpus)))
        }
        EnvKind::Industrial => {
            if a.corpus.is_some() {
                return Err(usage("--corpus only applies to the service environment"));
            }
            (industrial_bench_tasks(), None)
        }
    };
    let http = match a.backend.backend {
        BackendKind::Http => Some(HttpTrio::new(config)?),
        BackendKind::Oracle => None,
    };
    let choice = http.as_ref().map_or_else(|| BackendChoice::Oracle(oracle_config(&a.backend)), HttpTrio::choice);
    let workers = a.workers.or(config.workers).unwrap_or_else(|| {
        if http.is_some() {
            4
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    });
    let mut records = Vec::new();
    for v in variants {
        let mut opts = base.clone();
        opts.variant = v;
        opts.repetitions = a.reps;
        opts.corpus_hash = hash.clone();
        opts.workers = workers;
        records.extend(run_corpus(&tasks, &opts, &choice).map_err(failed)?);
    }
    if let Some(p) = &a.transcripts {
        let file = std::fs::File::create(p).map_err(|e| failed(format!("{}: {e}", p.display())))?;
        write_records(std::io::BufWriter::new(file), &records).map_err(failed)?;
    }
    emit_report(&BenchReport::from_records(&records), a.report.as_deref(), a.markdown.as_deref())
}

fn emit_report(report: &BenchReport, json: Option<&Path>, markdown: Option<&Path>) -> CliResult {
    if let Some(p) = json {
        write_output(Some(p), &report.to_json())?;
    }
    if let Some(p) = markdown {
        write_output(Some(p), &report.to_markdown())?;
    }
    write_output(None, &report.to_markdown())
}

fn replay_cmd(a: ReplayArgs) -> CliResult {
    let records = load_records(&a.transcripts)?;
    let mut replayed = Vec::with_capacity(records.len());
    let mut diverged = Vec::new();
    for r in &records {
        let again = replay_record(r);
        if !same_episode(&r.transcript, &again.transcript) {
            diverged.push(format!("{} ({}, repetition {})", r.task.id, r.config.label, r.task.repetition));
        }
        replayed.push(again);
    }
    emit_report(&BenchReport::from_records(&replayed), a.report.as_deref(), a.markdown.as_deref())?;
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(failed(format!("{} episode(s) diverged from the recording: {}", diverged.len(), diverged.join(", "))))
    }
}

fn classify_cmd(a: ClassifyArgs) -> CliResult {
    let records = load_records(&a.transcripts)?;
    let gtsg: HashMap<String, Vec<PrimitiveCall>> = match &a.corpus {
        Some(p) => load_corpus(p)?.iter().map(|s| (s.id.clone(), ground_truth_chain(s))).collect(),
        None => HashMap::new(),
    };
    let rows = label_records(&records, &gtsg);
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).map_err(failed)?;
    write_output(a.out.as_deref(), &String::from_utf8(buf).map_err(failed)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFileEntry {
    #[serde(default)]
    name: Option<String>,
    env: EnvKind,
    #[serde(default)]
    initial: Option<WorldState>,
    chain: Vec<PrimitiveCall>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChainFile {
    One(ChainFileEntry),
    Many(Vec<ChainFileEntry>),
}

fn verify_chain_cmd(a: VerifyChainArgs) -> CliResult {
    if !a.chain.exists() {
        return Err(usage(format!("{}: no such file", a.chain.display())));
    }
    let text = std::fs::read_to_string(&a.chain).map_err(failed)?;
    let entries = match serde_json::from_str::<ChainFile>(&text) {
        Ok(ChainFile::One(e)) => vec![e],
        Ok(ChainFile::Many(v)) => v,
        Err(e) => return Err(usage(format!("{}: not a chain file: {e}", a.chain.display()))),
    };
    let mut failures = 0;
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        let env = environment(e.env);
        let initial = e.initial.clone().unwrap_or_else(|| env.initial.clone());
        let name = e.name.clone().unwrap_or_else(|| format!("chain {i}"));
        match verify_chain(&registry(e.env), &env, &e.chain, &initial) {
            Ok(()) => out.push_str(&format!("{name}: ok\n")),
            Err(err) => {
                failures += 1;
                out.push_str(&format!("{name}: {err}\n"));
            }
        }
    }
    write_output(None, &out)?;
    if failures == 0 {
        Ok(())
    } else {
        Err(failed(format!("{failures} of {} chain(s) violate the chaining condition", entries.len())))
    }
}

fn report_cmd(a: ReportArgs) -> CliResult {
    let records = load_records(&a.transcripts)?;
    let report = BenchReport::from_records(&records);
    let text = match a.format {
        Format::Json => report.to_json(),
        Format::Markdown => report.to_markdown(),
    };
    write_output(a.out.as_deref(), &text)
}

fn catalog_cmd(a: CatalogArgs) -> CliResult {
    let kind = EnvKind::from(a.env);
    let reg = registry(kind);
    let doc = serde_json::json!({
        "environment": environment(kind),
        "skills": reg,
        "skill_headers": planloop_core::skill_headers(&reg),
    });
    write_output(None, &format!("{}\n", serde_json::to_string_pretty(&doc).map_err(failed)?))
}
