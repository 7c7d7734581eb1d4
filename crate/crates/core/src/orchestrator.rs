//! The plan / expected outcomes / execute / feedback loop.
//!
//! One episode: the planner turns the instruction into steps, the
//! expected-outcomes module describes each step, then the executor writes a
//! snippet per step. Snippets are first run in a digital twin (preconditions
//! only, every possible outcome tracked); accepted snippets are executed in
//! the environment with the episode's seeded rng. Every follow-up prompt
//! carries the feedback, the robot's location and the gripper contents.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Backends, ChatSession, GenerationRecord, ModuleRole, TokenMethod};
use crate::parser::{extract_code, parse_eo_map, parse_plan, parse_snippet, ExpectedOutcomes, ParseError, PrimitiveCall, SnippetProgram};
use crate::primitives::{execute, skill_headers, success_outcomes, CallError, ExecOutcome, Registry};
use crate::prompts;
use crate::world::{Environment, GoalSpec, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cap,
    Plan,
    Eo,
    Fb,
    Full,
    DsFull,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Cap, Variant::Plan, Variant::Eo, Variant::Fb, Variant::Full, Variant::DsFull];

    /// Row label in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Cap => "CaP",
            Variant::Plan => "Plan",
            Variant::Eo => "EO",
            Variant::Fb => "FB",
            Variant::Full => "Full",
            Variant::DsFull => "DS-full",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        let name = name.to_ascii_lowercase().replace('_', "-");
        Variant::ALL.into_iter().find(|v| v.label().to_ascii_lowercase() == name)
    }

    pub fn config(self, seed: u64) -> PipelineConfig {
        let (use_planner, use_eo, use_feedback, single_shot) = match self {
            Variant::Cap => (false, false, false, true),
            Variant::Plan => (true, false, false, false),
            Variant::Eo => (true, true, false, false),
            Variant::Fb => (true, false, true, false),
            Variant::Full | Variant::DsFull => (true, true, true, false),
        };
        PipelineConfig {
            label: self.label().to_string(),
            use_planner,
            use_eo,
            use_feedback,
            single_shot,
            timeout_factor: DEFAULT_TIMEOUT_FACTOR,
            grasp_failure_prob: None,
            seed,
        }
    }
}

pub const DEFAULT_TIMEOUT_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub label: String,
    pub use_planner: bool,
    pub use_eo: bool,
    pub use_feedback: bool,
    pub single_shot: bool,
    pub timeout_factor: f64,
    /// Overrides the registry's grasp failure probability when set.
    #[serde(default)]
    pub grasp_failure_prob: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("single-shot mode excludes the planner, expected outcomes and feedback")]
    SingleShotFlags,
    #[error("expected outcomes need a plan")]
    EoWithoutPlanner,
    #[error("timeout factor must be positive and finite")]
    TimeoutFactor,
    #[error("grasp failure probability must lie in [0, 1]")]
    Probability,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.single_shot && (self.use_planner || self.use_eo || self.use_feedback) {
            return Err(ConfigError::SingleShotFlags);
        }
        if self.use_eo && !self.use_planner {
            return Err(ConfigError::EoWithoutPlanner);
        }
        if !(self.timeout_factor.is_finite() && self.timeout_factor > 0.0) {
            return Err(ConfigError::TimeoutFactor);
        }
        if self.grasp_failure_prob.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            return Err(ConfigError::Probability);
        }
        Ok(())
    }

    /// Interaction budget for a plan: `ceil(timeout_factor × plan_len)`, at
    /// least one.
    pub fn timeout(&self, plan_len: usize) -> usize {
        let budget = self.timeout_factor * plan_len as f64;
        let whole = budget as usize;
        let ceil = if (whole as f64) < budget { whole + 1 } else { whole };
        ceil.max(1)
    }
}

pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Always reads zero; keeps transcripts free of timing noise.
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub id: String,
    pub instruction: String,
    pub goal: GoalSpec,
    pub initial: WorldState,
    #[serde(default)]
    pub repetition: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum FeedbackStatus {
    Done,
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub status: FeedbackStatus,
    pub robot_at: String,
    pub gripper: String,
    pub remaining_plan: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_eo: Option<String>,
}

impl Feedback {
    pub fn status_line(&self) -> String {
        match &self.status {
            FeedbackStatus::Done => "Done".to_string(),
            FeedbackStatus::Error(msg) => format!("Error: {msg}"),
        }
    }

    pub fn is_done(&self) -> bool {
        self.status == FeedbackStatus::Done
    }

    /// The follow-up prompt carrying this feedback.
    pub fn to_prompt(&self) -> String {
        prompts::followup_prompt(
            &self.status_line(),
            &self.robot_at,
            &self.gripper,
            &self.remaining_plan,
            self.current_eo.as_deref(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallFailure {
    pub index: usize,
    pub call: PrimitiveCall,
    pub error: CallError,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum TwinResult {
    Accepted,
    Rejected(CallFailure),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum CallResult {
    Success,
    Violation { error: CallError },
    StochasticFailure { message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallExecution {
    pub call: PrimitiveCall,
    #[serde(flatten)]
    pub result: CallResult,
}

/// Calls run in the environment, in order, up to the first failure.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvResult {
    pub steps: Vec<CallExecution>,
}

impl EnvResult {
    pub fn error_message(&self) -> Option<String> {
        self.steps.iter().find_map(|s| match &s.result {
            CallResult::Success => None,
            CallResult::Violation { error } => Some(error.to_string()),
            CallResult::StochasticFailure { message } => Some(message.clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub index: usize,
    /// Current plan step when the executor was prompted.
    pub step: Option<String>,
    pub generation: GenerationRecord,
    pub program: Result<SnippetProgram, ParseError>,
    pub twin: Option<TwinResult>,
    pub env: Option<EnvResult>,
    pub feedback: Option<Feedback>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
    Aborted { reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub execution_calls: u64,
    /// Executor output tokens only.
    pub tokens_out_total: u64,
    pub planner_tokens: u64,
    pub eo_tokens: u64,
    pub token_method: Option<TokenMethod>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub task_id: String,
    pub instruction: String,
    pub label: String,
    pub repetition: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub info: EpisodeInfo,
    pub plan: Vec<String>,
    pub eos: Option<ExpectedOutcomes>,
    /// Non-fatal oddities (an unparseable expected-outcome map, ...).
    #[serde(default)]
    pub notes: Vec<String>,
    /// Planner and expected-outcome generations.
    pub setup: Vec<GenerationRecord>,
    pub interactions: Vec<Interaction>,
    pub outcome: Outcome,
    pub metrics: EpisodeMetrics,
    pub final_state: WorldState,
}

impl EpisodeTranscript {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Every generation in request order.
    pub fn generations(&self) -> impl Iterator<Item = &GenerationRecord> {
        self.setup.iter().chain(self.interactions.iter().map(|i| &i.generation))
    }
}

/// Runs `calls` against every state the twin considers possible. Returns
/// the reachable post-states, or the first call that some state does not
/// afford.
pub fn twin_states(
    registry: &Registry,
    env: &Environment,
    state: &WorldState,
    calls: &[PrimitiveCall],
) -> Result<Vec<WorldState>, CallFailure> {
    let mut states = vec![state.clone()];
    for (index, call) in calls.iter().enumerate() {
        let fail = |error| CallFailure { index, call: call.clone(), error };
        let spec = registry.get(&call.name).ok_or_else(|| fail(CallError::UnknownPrimitive(call.name.clone())))?;
        let mut next: Vec<WorldState> = Vec::new();
        for s in &states {
            for outcome in success_outcomes(spec, s, env, &call.args).map_err(fail)? {
                if !next.contains(&outcome) {
                    next.push(outcome);
                }
            }
        }
        states = next;
    }
    Ok(states)
}

pub fn twin_check(registry: &Registry, env: &Environment, state: &WorldState, calls: &[PrimitiveCall]) -> TwinResult {
    match twin_states(registry, env, state, calls) {
        Ok(_) => TwinResult::Accepted,
        Err(f) => TwinResult::Rejected(f),
    }
}

/// Executes `calls` in order, stopping at the first failure.
pub fn execute_program(
    registry: &Registry,
    env: &Environment,
    state: &mut WorldState,
    calls: &[PrimitiveCall],
    rng: &mut ChaCha8Rng,
) -> EnvResult {
    let mut steps = Vec::with_capacity(calls.len());
    for call in calls {
        let Some(spec) = registry.get(&call.name) else {
            let error = CallError::UnknownPrimitive(call.name.clone());
            steps.push(CallExecution { call: call.clone(), result: CallResult::Violation { error } });
            break;
        };
        match execute(spec, state, env, &call.args, rng) {
            ExecOutcome::Success(next) => {
                *state = next;
                steps.push(CallExecution { call: call.clone(), result: CallResult::Success });
            }
            ExecOutcome::PreconditionViolation(error) => {
                steps.push(CallExecution { call: call.clone(), result: CallResult::Violation { error } });
                break;
            }
            ExecOutcome::StochasticFailure { message, state: next } => {
                *state = next;
                steps.push(CallExecution { call: call.clone(), result: CallResult::StochasticFailure { message } });
                break;
            }
        }
    }
    EnvResult { steps }
}

/// Feedback after one interaction. Errors are reported verbatim, first from
/// the parser, then the twin, then the environment.
pub fn compose_feedback(
    program: &Result<SnippetProgram, ParseError>,
    twin: Option<&TwinResult>,
    env_result: Option<&EnvResult>,
    state: &WorldState,
    remaining_plan: &[String],
    current_eo: Option<&str>,
) -> Feedback {
    let error = match (program, twin) {
        (Err(e), _) => Some(e.to_string()),
        (Ok(_), Some(TwinResult::Rejected(f))) => Some(f.error.to_string()),
        _ => env_result.and_then(EnvResult::error_message),
    };
    Feedback {
        status: error.map_or(FeedbackStatus::Done, FeedbackStatus::Error),
        robot_at: state.robot_at.clone(),
        gripper: state.gripper_description(),
        remaining_plan: remaining_plan.to_vec(),
        current_eo: current_eo.map(str::to_string),
    }
}

fn parse_completion(raw: &str) -> Result<SnippetProgram, ParseError> {
    parse_snippet(extract_code(raw)?)
}

fn effective_registry(registry: &Registry, config: &PipelineConfig) -> Result<Registry, String> {
    match config.grasp_failure_prob {
        Some(p) => registry.clone().with_failure_probability("grasp", p).map_err(|e| e.to_string()),
        None => Ok(registry.clone()),
    }
}

struct Recorder<'c> {
    clock: &'c dyn Clock,
    started: f64,
    transcript: EpisodeTranscript,
}

impl<'c> Recorder<'c> {
    fn new(task: &EpisodeTask, config: &PipelineConfig, clock: &'c dyn Clock) -> Self {
        let transcript = EpisodeTranscript {
            info: EpisodeInfo {
                task_id: task.id.clone(),
                instruction: task.instruction.clone(),
                label: config.label.clone(),
                repetition: task.repetition,
                seed: config.seed,
            },
            plan: Vec::new(),
            eos: None,
            notes: Vec::new(),
            setup: Vec::new(),
            interactions: Vec::new(),
            outcome: Outcome::Timeout,
            metrics: EpisodeMetrics::default(),
            final_state: task.initial.clone(),
        };
        Self { clock, started: clock.now_secs(), transcript }
    }

    fn finish(mut self, outcome: Outcome, state: WorldState) -> EpisodeTranscript {
        let t = &mut self.transcript;
        t.outcome = outcome;
        t.final_state = state;
        let sum = |module: ModuleRole| -> u64 {
            t.setup.iter().filter(|g| g.module == module).map(|g| g.tokens_out).sum()
        };
        let executor_tokens = t.interactions.iter().map(|i| i.generation.tokens_out).sum();
        let method = t.generations().map(|g| g.token_method).fold(None, |acc, m| match (acc, m) {
            (Some(TokenMethod::Whitespace), _) | (_, TokenMethod::Whitespace) => Some(TokenMethod::Whitespace),
            _ => Some(m),
        });
        t.metrics = EpisodeMetrics {
            execution_calls: t.interactions.len() as u64,
            tokens_out_total: executor_tokens,
            planner_tokens: sum(ModuleRole::Planner),
            eo_tokens: sum(ModuleRole::ExpectedOutcomes),
            token_method: method,
            wall_time_secs: self.clock.now_secs() - self.started,
        };
        self.transcript
    }
}

/// Runs one episode of the configured variant. Never fails: configuration
/// and gateway errors end the episode as `Aborted`.
pub fn run_episode(
    task: &EpisodeTask,
    env: &Environment,
    registry: &Registry,
    config: &PipelineConfig,
    backends: Backends<'_>,
    clock: &dyn Clock,
) -> EpisodeTranscript {
    if config.single_shot {
        return run_cap_episode(task, env, registry, config, backends, clock);
    }
    let mut rec = Recorder::new(task, config, clock);
    let aborted = |reason: String| Outcome::Aborted { reason };
    if let Err(e) = config.validate() {
        return rec.finish(aborted(e.to_string()), task.initial.clone());
    }
    let registry = match effective_registry(registry, config) {
        Ok(r) => r,
        Err(e) => return rec.finish(aborted(e), task.initial.clone()),
    };

    // plan
    let plan = if config.use_planner {
        let mut planner = ChatSession::new(ModuleRole::Planner, backends.planner);
        match planner.send(prompts::planner_prompt(&task.instruction)) {
            Err(e) => return rec.finish(aborted(e.to_string()), task.initial.clone()),
            Ok((text, record)) => {
                rec.transcript.setup.push(record);
                match parse_plan(&text) {
                    Ok(plan) => plan,
                    Err(e) => return rec.finish(aborted(format!("planner output: {e}")), task.initial.clone()),
                }
            }
        }
    } else {
        vec![task.instruction.clone()]
    };
    rec.transcript.plan = plan.clone();

    // expected outcomes
    let eos = if config.use_eo {
        let mut eo = ChatSession::new(ModuleRole::ExpectedOutcomes, backends.eo);
        match eo.send(prompts::eo_prompt(&task.instruction, &plan)) {
            Err(e) => return rec.finish(aborted(e.to_string()), task.initial.clone()),
            Ok((text, record)) => {
                rec.transcript.setup.push(record);
                match parse_eo_map(&text, &plan) {
                    Ok(eos) => Some(eos),
                    Err(e) => {
                        rec.transcript.notes.push(format!("expected outcomes ignored: {e}"));
                        None
                    }
                }
            }
        }
    } else {
        None
    };
    rec.transcript.eos = eos.clone();

    // execution loop
    let timeout = config.timeout(plan.len());
    let skills = skill_headers(&registry);
    let env_block = prompts::environment_block(env, &task.initial);
    let mut executor = ChatSession::new(ModuleRole::Executor, backends.executor);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = task.initial.clone();
    let mut remaining = plan.clone();
    let mut last_feedback: Option<Feedback> = None;
    let outcome = loop {
        if task.goal.holds_in(&state) {
            break Outcome::Success;
        }
        let index = rec.transcript.interactions.len();
        if !config.use_feedback && index > 0 && remaining.is_empty() {
            // open loop: nothing is left to ask for
            break Outcome::Timeout;
        }
        if index >= timeout {
            break Outcome::Timeout;
        }
        let prompt = match &last_feedback {
            None => prompts::executor_prompt(&task.instruction, &plan, eos.as_ref(), &skills, &env_block),
            Some(f) => f.to_prompt(),
        };
        let step = remaining.first().cloned();
        let (text, generation) = match executor.send(prompt) {
            Ok(r) => r,
            Err(e) => break aborted(e.to_string()),
        };
        let program = parse_completion(&text);
        let (twin, env_result) = if config.use_feedback {
            match &program {
                Err(_) => (None, None),
                Ok(p) => {
                    let twin = twin_check(&registry, env, &state, &p.calls);
                    if twin == TwinResult::Accepted {
                        if !remaining.is_empty() {
                            remaining.remove(0);
                        }
                        let result = execute_program(&registry, env, &mut state, &p.calls, &mut rng);
                        (Some(twin), Some(result))
                    } else {
                        (Some(twin), None)
                    }
                }
            }
        } else {
            if !remaining.is_empty() {
                remaining.remove(0);
            }
            let result = program.as_ref().ok().map(|p| execute_program(&registry, env, &mut state, &p.calls, &mut rng));
            (None, result)
        };
        let current_eo = remaining.first().and_then(|s| eos.as_ref().and_then(|e| e.get(s)));
        let mut feedback = compose_feedback(&program, twin.as_ref(), env_result.as_ref(), &state, &remaining, current_eo);
        if !config.use_feedback {
            feedback.status = FeedbackStatus::Done;
        }
        rec.transcript.interactions.push(Interaction {
            index,
            step,
            generation,
            program,
            twin,
            env: env_result,
            feedback: Some(feedback.clone()),
        });
        last_feedback = Some(feedback);
    };
    rec.finish(outcome, state)
}

/// Code-as-policies baseline: one prompt, one program, executed open loop.
pub fn run_cap_episode(
    task: &EpisodeTask,
    env: &Environment,
    registry: &Registry,
    config: &PipelineConfig,
    backends: Backends<'_>,
    clock: &dyn Clock,
) -> EpisodeTranscript {
    let mut rec = Recorder::new(task, config, clock);
    let aborted = |reason: String| Outcome::Aborted { reason };
    let registry = match config.validate().map_err(|e| e.to_string()).and_then(|_| effective_registry(registry, config)) {
        Ok(r) => r,
        Err(e) => return rec.finish(aborted(e), task.initial.clone()),
    };
    let prompt = prompts::cap_prompt(
        &task.instruction,
        &skill_headers(&registry),
        &prompts::environment_block(env, &task.initial),
    );
    let mut session = ChatSession::new(ModuleRole::CodeAsPolicies, backends.executor);
    let (text, generation) = match session.send(prompt) {
        Ok(r) => r,
        Err(e) => return rec.finish(aborted(e.to_string()), task.initial.clone()),
    };
    let program = parse_completion(&text);
    let mut state = task.initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let env_result = program.as_ref().ok().map(|p| execute_program(&registry, env, &mut state, &p.calls, &mut rng));
    let outcome = match &program {
        Err(e) => aborted(format!("unparseable program: {e}")),
        Ok(_) if task.goal.holds_in(&state) => Outcome::Success,
        Ok(_) => Outcome::Timeout,
    };
    rec.transcript.interactions.push(Interaction {
        index: 0,
        step: None,
        generation,
        program,
        twin: None,
        env: env_result,
        feedback: None,
    });
    rec.finish(outcome, state)
}
