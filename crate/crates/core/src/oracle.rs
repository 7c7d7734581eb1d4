//! Rule-based stand-in for the chat model.
//!
//! The oracle knows the ground-truth chain of its task and answers every
//! module of the pipeline from it: a one-step-per-primitive plan, outcome
//! sentences, and per-step code snippets. Faults degrade those answers in the
//! two ways the failure taxonomy cares about (a missing primitive, a missing
//! grasp part) or by emitting unparseable text. The executor only sees what a
//! model would see: the prompts, including the feedback and state reminder.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatBackend, ChatRequest, Completion, GatewayError, Message, Role};
use crate::parser::{parse_string_list, PrimitiveCall, SnippetProgram};
use crate::primitives::{success_outcomes, CallError, Registry};
use crate::pyrepr;
use crate::world::{Environment, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Skip the `move_to` that precedes a grasp.
    OmitMoveBeforeGrasp,
    /// Leave the part out of expected outcomes and grasp calls.
    OmitGraspPart,
    /// Answer the first executor prompt without code tags.
    EmitUnparseableOnce,
    /// Drop the first movement step from the plan.
    OmitPlanStep,
}

impl Fault {
    pub const ALL: [Fault; 4] =
        [Fault::OmitMoveBeforeGrasp, Fault::OmitGraspPart, Fault::EmitUnparseableOnce, Fault::OmitPlanStep];

    pub fn as_str(self) -> &'static str {
        match self {
            Fault::OmitMoveBeforeGrasp => "omit_move_before_grasp",
            Fault::OmitGraspPart => "omit_grasp_part",
            Fault::EmitUnparseableOnce => "emit_unparseable_once",
            Fault::OmitPlanStep => "omit_plan_step",
        }
    }

    pub fn parse(name: &str) -> Option<Fault> {
        Fault::ALL.into_iter().find(|f| f.as_str() == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// After an error feedback, work out progress from the state reminder
    /// and emit a corrected snippet instead of repeating the last one.
    #[serde(default)]
    pub recover_on_feedback: bool,
}

impl OracleConfig {
    pub fn with_fault(mut self, fault: Fault) -> Self {
        if !self.faults.contains(&fault) {
            self.faults.push(fault);
        }
        self
    }

    pub fn recovering(mut self) -> Self {
        self.recover_on_feedback = true;
        self
    }

    pub fn has(&self, fault: Fault) -> bool {
        self.faults.contains(&fault)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("ground-truth chain call {index} ({call}) is not executable: {error}")]
    InvalidChain { index: usize, call: String, error: CallError },
}

/// The ground-truth chain, the plan step describing each call and the
/// (robot location, gripper description) reached after each chain prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleTask {
    pub chain: Vec<PrimitiveCall>,
    steps: Vec<String>,
    waypoints: Vec<(String, String)>,
}

impl OracleTask {
    pub fn new(
        chain: Vec<PrimitiveCall>,
        registry: &Registry,
        env: &Environment,
        initial: &WorldState,
    ) -> Result<Self, OracleError> {
        let mut state = initial.clone();
        let mut waypoints = Vec::with_capacity(chain.len() + 1);
        waypoints.push(reminder_key(&state));
        for (index, call) in chain.iter().enumerate() {
            let invalid = |error| OracleError::InvalidChain { index, call: call.to_string(), error };
            let spec = registry.get(&call.name).ok_or_else(|| invalid(CallError::UnknownPrimitive(call.name.clone())))?;
            let mut outcomes = success_outcomes(spec, &state, env, &call.args).map_err(invalid)?;
            state = outcomes.swap_remove(0);
            waypoints.push(reminder_key(&state));
        }
        let steps = chain.iter().map(step_text).collect();
        Ok(Self { chain, steps, waypoints })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    fn index_of(&self, step: &str) -> Option<usize> {
        self.steps.iter().position(|s| s == step)
    }
}

fn reminder_key(state: &WorldState) -> (String, String) {
    (state.robot_at.clone(), state.gripper_description())
}

fn arg(call: &PrimitiveCall, i: usize) -> &str {
    call.args.get(i).map_or("", String::as_str)
}

/// Plan step phrasing for one primitive call.
pub fn step_text(call: &PrimitiveCall) -> String {
    match call.name.as_str() {
        "move_to" => format!("Move to the {}", arg(call, 0)),
        "grasp" => format!("Grasp the {}", arg(call, 0)),
        "put_down" => format!("Put down the {} on the {}", arg(call, 0), arg(call, 1)),
        "press_button" => format!("Press the {} button", arg(call, 0)),
        "plug_in" => format!("Plug the {} into the {}", arg(call, 0), arg(call, 1)),
        "place_in_rack" => format!("Place the {} in its rack", arg(call, 0)),
        "open_trapdoor" => "Open the trapdoor".to_string(),
        other => format!("Call {other}"),
    }
}

fn outcome_text(call: &PrimitiveCall, with_part: bool) -> String {
    match call.name.as_str() {
        "move_to" => format!("The robot should be at the {}.", arg(call, 0)),
        "grasp" => match call.args.get(1) {
            Some(part) if with_part => {
                format!("The {} should be in the robot's gripper, grasped by the {part}.", arg(call, 0))
            }
            _ => format!("The {} should be in the robot's gripper.", arg(call, 0)),
        },
        "put_down" => format!("The {} should be on the {}.", arg(call, 0), arg(call, 1)),
        "press_button" => format!("The {} button should be pressed.", arg(call, 0)),
        "plug_in" => format!("The {} should be plugged into the {}.", arg(call, 0), arg(call, 1)),
        "place_in_rack" => format!("The {} should be in its rack.", arg(call, 0)),
        "open_trapdoor" => "The trapdoor should be open.".to_string(),
        _ => "The step should be completed.".to_string(),
    }
}

const PLANNER_MARKER: &str = "Please only output the plan as a tuple of strings";
const EO_MARKER: &str = "Please fill out the following python dictionary";
const EO_PLAN_MARKER: &str = "The plan consists of the following steps: ";
const EXECUTOR_MARKER: &str = "Please define a function do(), which will contain";
const CAP_MARKER: &str = "must contain the full sequence of skills";
const PARAPHRASE_MARKER: &str = "Rewrite the following robot task instruction";
const FEEDBACK_PREFIX: &str = "Feedback: ";
const PLAN_MARKER: &str = "The plan is: ";
const REMAINING_MARKER: &str = "The remaining plan is: ";
const LOCATION_MARKER: &str = "Robot location: ";

pub const UNPARSEABLE_REPLY: &str = "I will first move to the right place and then pick up the object.";

#[derive(Debug, Default)]
struct ExecutorBelief {
    /// Chain calls the executor believes are done.
    done: usize,
    /// Chain span covered by the last emitted snippet.
    last_span: Option<(usize, usize)>,
    last_reply: Option<String>,
    garbage_sent: bool,
}

pub struct OracleBackend {
    config: OracleConfig,
    task: Option<OracleTask>,
    belief: RefCell<ExecutorBelief>,
    paraphrases: Cell<usize>,
}

impl OracleBackend {
    pub fn new(config: OracleConfig, task: OracleTask) -> Self {
        Self { config, task: Some(task), belief: RefCell::default(), paraphrases: Cell::new(0) }
    }

    /// An oracle that can only paraphrase instructions.
    pub fn without_task(config: OracleConfig) -> Self {
        Self { config, task: None, belief: RefCell::default(), paraphrases: Cell::new(0) }
    }

    fn task(&self) -> Result<&OracleTask, GatewayError> {
        self.task.as_ref().ok_or_else(|| GatewayError::Backend { message: "oracle has no task".to_string() })
    }

    fn plan_reply(&self) -> Result<String, GatewayError> {
        let task = self.task()?;
        let mut steps: Vec<&str> = task.steps.iter().map(String::as_str).collect();
        if self.config.has(Fault::OmitPlanStep) {
            if let Some(i) = task.chain.iter().position(|c| c.name == "move_to") {
                steps.remove(i);
            }
        }
        Ok(pyrepr::tuple(steps))
    }

    fn eo_reply(&self, prompt: &str) -> Result<String, GatewayError> {
        let task = self.task()?;
        let plan = prompt
            .find(EO_PLAN_MARKER)
            .and_then(|at| parse_string_list(&prompt[at + EO_PLAN_MARKER.len()..]).ok())
            .unwrap_or_default();
        let with_part = !self.config.has(Fault::OmitGraspPart);
        let outcomes: Vec<(String, String)> = plan
            .iter()
            .map(|step| {
                let text = match task.index_of(step) {
                    Some(i) => outcome_text(&task.chain[i], with_part),
                    None => "The step should be completed.".to_string(),
                };
                (step.clone(), text)
            })
            .collect();
        Ok(pyrepr::dict(outcomes.iter().map(|(k, v)| (k.as_str(), v.as_str()))))
    }

    /// Chain calls `start..=end` as the model would write them.
    fn snippet(&self, messages: &[Message], start: usize, end: usize, omit_move: bool) -> (String, usize) {
        let task = self.task.as_ref().expect("snippet needs a task");
        let n = task.chain.len();
        let mut end = end.min(n - 1);
        if omit_move && start == end && task.chain[start].name == "move_to" && start + 1 < n {
            if task.chain[start + 1].name == "grasp" {
                end = start + 1;
            }
        }
        let mut calls = Vec::new();
        for i in start..=end {
            let call = &task.chain[i];
            if omit_move && call.name == "move_to" && task.chain.get(i + 1).is_some_and(|c| c.name == "grasp") {
                continue;
            }
            calls.push(self.written_call(messages, call));
        }
        (render_snippet(&SnippetProgram { calls }), end)
    }

    /// Grasp parts are only written when the context states them.
    fn written_call(&self, messages: &[Message], call: &PrimitiveCall) -> PrimitiveCall {
        if call.name != "grasp" || call.args.len() < 2 {
            return call.clone();
        }
        let phrase = format!("grasped by the {}", call.args[1]);
        let known = !self.config.has(Fault::OmitGraspPart)
            && messages.iter().any(|m| m.role != Role::Assistant && m.content.contains(&phrase));
        if known {
            call.clone()
        } else {
            PrimitiveCall { name: call.name.clone(), args: call.args[..1].to_vec() }
        }
    }

    fn executor_reply(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let task = self.task()?;
        let n = task.chain.len();
        if n == 0 {
            return Ok(render_snippet(&SnippetProgram { calls: Vec::new() }));
        }
        let prompt = request.last_user();
        let mut belief = self.belief.borrow_mut();
        let followup = prompt.starts_with(FEEDBACK_PREFIX);
        let remaining = if followup {
            list_after(prompt, REMAINING_MARKER)
        } else {
            *belief = ExecutorBelief::default();
            list_after(prompt, PLAN_MARKER)
        };
        let step_end = remaining.first().and_then(|s| task.index_of(s)).unwrap_or(n - 1);

        if followup {
            let status = prompt[FEEDBACK_PREFIX.len()..].lines().next().unwrap_or("");
            if status.trim() == "Done" {
                if let Some((_, end)) = belief.last_span {
                    belief.done = belief.done.max(end + 1);
                }
            } else if !self.config.recover_on_feedback {
                if let Some(last) = belief.last_reply.clone() {
                    return Ok(last);
                }
            } else if let Some(progress) = self.progress_from_reminder(task, prompt, belief.done) {
                let start = progress.min(n - 1);
                let prev_end = belief.last_span.map_or(start, |(_, e)| e);
                let end = step_end.max(start).max(prev_end);
                let (text, end) = self.snippet(&request.messages, start, end, false);
                belief.done = start;
                belief.last_span = Some((start, end));
                belief.last_reply = Some(text.clone());
                return Ok(text);
            } else if let Some(last) = belief.last_reply.clone() {
                return Ok(last);
            }
        } else if self.config.has(Fault::EmitUnparseableOnce) && !belief.garbage_sent {
            belief.garbage_sent = true;
            belief.last_reply = Some(UNPARSEABLE_REPLY.to_string());
            return Ok(UNPARSEABLE_REPLY.to_string());
        }

        let known_step = remaining.first().and_then(|s| task.index_of(s));
        let (start, end) = match known_step {
            Some(i) if belief.done > i => (belief.done.min(n - 1), belief.done.min(n - 1)),
            Some(i) => (i, i),
            None => (belief.done.min(n - 1), n - 1),
        };
        let (text, end) = self.snippet(&request.messages, start, end, self.config.has(Fault::OmitMoveBeforeGrasp));
        belief.last_span = Some((start, end));
        belief.last_reply = Some(text.clone());
        Ok(text)
    }

    /// Chain prefix matching the reminder; ambiguous matches prefer the
    /// latest one not beyond `believed`.
    fn progress_from_reminder(&self, task: &OracleTask, prompt: &str, believed: usize) -> Option<usize> {
        let line = prompt.lines().find_map(|l| l.strip_prefix(LOCATION_MARKER))?;
        let (location, gripper) = line.split_once(". Gripper: ")?;
        let gripper = gripper.strip_suffix('.').unwrap_or(gripper);
        let matches: Vec<usize> = task
            .waypoints
            .iter()
            .enumerate()
            .filter(|(_, (l, g))| l == location && g == gripper)
            .map(|(k, _)| k)
            .collect();
        matches.iter().rev().find(|k| **k <= believed).or(matches.first()).copied()
    }

    fn cap_reply(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let task = self.task()?;
        if self.config.has(Fault::EmitUnparseableOnce) {
            return Ok(UNPARSEABLE_REPLY.to_string());
        }
        if task.chain.is_empty() {
            return Ok(render_snippet(&SnippetProgram { calls: Vec::new() }));
        }
        let (text, _) = self.snippet(&request.messages, 0, task.chain.len() - 1, self.config.has(Fault::OmitMoveBeforeGrasp));
        Ok(text)
    }

    fn paraphrase_reply(&self, prompt: &str) -> String {
        let names = prompt
            .split_once("must mention the ")
            .and_then(|(_, rest)| rest.split_once(" using exactly these names"))
            .map(|(names, _)| names);
        let Some((object, rest)) = names.and_then(|n| n.split_once(", the ")) else {
            return prompt.lines().last().unwrap_or("").trim_start_matches("Instruction: ").to_string();
        };
        let (source, target) = rest.split_once(" and the ").unwrap_or((rest, rest));
        let k = self.paraphrases.get();
        self.paraphrases.set(k + 1);
        match k % 3 {
            0 => format!("Take the {object} from the {source} and place it on the {target}."),
            1 => format!("Bring the {object} over to the {target}. It is on the {source} right now."),
            _ => format!("The {object} is on the {source}; please set it down on the {target}."),
        }
    }
}

fn list_after(prompt: &str, marker: &str) -> Vec<String> {
    prompt
        .find(marker)
        .and_then(|at| parse_string_list(&prompt[at + marker.len()..]).ok())
        .unwrap_or_default()
}

pub fn render_snippet(program: &SnippetProgram) -> String {
    format!("<code>\n{}</code>", program.to_source())
}

impl ChatBackend for OracleBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let prompt = request.last_user();
        let text = if prompt.contains(PARAPHRASE_MARKER) {
            self.paraphrase_reply(prompt)
        } else if prompt.contains(PLANNER_MARKER) {
            self.plan_reply()?
        } else if prompt.contains(EO_MARKER) {
            self.eo_reply(prompt)?
        } else if prompt.contains(CAP_MARKER) {
            self.cap_reply(request)?
        } else if prompt.contains(EXECUTOR_MARKER) || prompt.starts_with(FEEDBACK_PREFIX) {
            self.executor_reply(request)?
        } else {
            return Err(GatewayError::Backend { message: "oracle does not recognise the prompt".to_string() });
        };
        Ok(Completion::text(text))
    }

    fn name(&self) -> String {
        let mut name = String::from("oracle");
        for f in &self.config.faults {
            name.push('+');
            name.push_str(f.as_str());
        }
        if self.config.recover_on_feedback {
            name.push_str("+recover");
        }
        name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatSession, ModuleRole};
    use crate::parser::{extract_code, parse_eo_map, parse_plan, parse_snippet};
    use crate::primitives::{industrial_registry, service_registry};
    use crate::prompts::{eo_prompt, executor_prompt, followup_prompt, planner_prompt};
    use crate::taskgen::charger_task;
    use crate::world::{build_service_env, build_taskboard_env};
    use alloc::vec;

    fn fork_task() -> (Environment, WorldState, OracleTask) {
        let env = build_service_env();
        let mut initial = env.initial.clone();
        initial.placements.insert("Fork".into(), "Table".into());
        initial.robot_at = "Coffee table".into();
        let chain = vec![
            PrimitiveCall::new("move_to", &["Table"]),
            PrimitiveCall::new("grasp", &["Fork"]),
            PrimitiveCall::new("move_to", &["Desk"]),
            PrimitiveCall::new("put_down", &["Fork", "Desk"]),
        ];
        let task = OracleTask::new(chain, &service_registry(), &env, &initial).unwrap();
        (env, initial, task)
    }

    fn calls(reply: &str) -> Vec<PrimitiveCall> {
        parse_snippet(extract_code(reply).unwrap()).unwrap().calls
    }

    #[test]
    fn planner_emits_one_step_per_primitive() {
        let (_, _, task) = fork_task();
        let oracle = OracleBackend::new(OracleConfig::default(), task);
        let mut s = ChatSession::new(ModuleRole::Planner, &oracle);
        let plan = parse_plan(&s.send(planner_prompt("Move the Fork to the Desk. It is on the Table.")).unwrap().0).unwrap();
        assert_eq!(plan, ["Move to the Table", "Grasp the Fork", "Move to the Desk", "Put down the Fork on the Desk"]);
    }

    #[test]
    fn omitted_plan_step_is_the_first_move() {
        let (_, _, task) = fork_task();
        let oracle = OracleBackend::new(OracleConfig::default().with_fault(Fault::OmitPlanStep), task);
        let mut s = ChatSession::new(ModuleRole::Planner, &oracle);
        let plan = parse_plan(&s.send(planner_prompt("t")).unwrap().0).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan[0], "Grasp the Fork");
    }

    #[test]
    fn eo_mentions_part_unless_faulted() {
        let env = build_taskboard_env();
        let task = charger_task();
        let plan: Vec<String> = task.chain.iter().map(step_text).collect();
        let otask = OracleTask::new(task.chain.clone(), &industrial_registry(), &env, &env.initial).unwrap();
        let oracle = OracleBackend::new(OracleConfig::default(), otask.clone());
        let mut s = ChatSession::new(ModuleRole::ExpectedOutcomes, &oracle);
        let eos = parse_eo_map(&s.send(eo_prompt(&task.instruction, &plan)).unwrap().0, &plan).unwrap();
        assert_eq!(eos.get("Grasp the charger"), Some("The charger should be in the robot's gripper, grasped by the plug."));

        let faulty = OracleBackend::new(OracleConfig::default().with_fault(Fault::OmitGraspPart), otask);
        let mut s = ChatSession::new(ModuleRole::ExpectedOutcomes, &faulty);
        let eos = parse_eo_map(&s.send(eo_prompt(&task.instruction, &plan)).unwrap().0, &plan).unwrap();
        assert_eq!(eos.get("Grasp the charger"), Some("The charger should be in the robot's gripper."));
    }

    #[test]
    fn omit_move_then_recover() {
        let (env, initial, task) = fork_task();
        let plan: Vec<String> = task.steps().to_vec();
        let oracle =
            OracleBackend::new(OracleConfig::default().with_fault(Fault::OmitMoveBeforeGrasp).recovering(), task);
        let mut s = ChatSession::new(ModuleRole::Executor, &oracle);
        let first = s.send(executor_prompt("t", &plan, None, "", "")).unwrap().0;
        assert_eq!(calls(&first), [PrimitiveCall::new("grasp", &["Fork"])]);
        let _ = env;
        let feedback = followup_prompt("Error: robot is not at the Fork's location", &initial.robot_at, "empty", &plan, None);
        let second = s.send(feedback).unwrap().0;
        assert_eq!(
            calls(&second),
            [PrimitiveCall::new("move_to", &["Table"]), PrimitiveCall::new("grasp", &["Fork"])]
        );
    }

    #[test]
    fn part_is_written_only_when_context_states_it() {
        let env = build_taskboard_env();
        let task = charger_task();
        let plan: Vec<String> = task.chain.iter().map(step_text).collect();
        let otask = OracleTask::new(task.chain.clone(), &industrial_registry(), &env, &env.initial).unwrap();
        let oracle = OracleBackend::new(OracleConfig::default(), otask.clone());
        let mut s = ChatSession::new(ModuleRole::Executor, &oracle);
        let reply = s.send(executor_prompt("t", &plan, None, "", "")).unwrap().0;
        assert_eq!(calls(&reply), [PrimitiveCall::new("grasp", &["charger"])]);

        let eos = crate::parser::ExpectedOutcomes {
            entries: vec![crate::parser::ExpectedOutcome {
                step: plan[0].clone(),
                outcome: "The charger should be in the robot's gripper, grasped by the plug.".into(),
            }],
        };
        let oracle = OracleBackend::new(OracleConfig::default(), otask);
        let mut s = ChatSession::new(ModuleRole::Executor, &oracle);
        let reply = s.send(executor_prompt("t", &plan, Some(&eos), "", "")).unwrap().0;
        assert_eq!(calls(&reply), [PrimitiveCall::new("grasp", &["charger", "plug"])]);
    }

    #[test]
    fn unparseable_once_then_repeat_without_recovery() {
        let (_, initial, task) = fork_task();
        let plan: Vec<String> = task.steps().to_vec();
        let oracle = OracleBackend::new(OracleConfig::default().with_fault(Fault::EmitUnparseableOnce), task);
        let mut s = ChatSession::new(ModuleRole::Executor, &oracle);
        assert_eq!(s.send(executor_prompt("t", &plan, None, "", "")).unwrap().0, UNPARSEABLE_REPLY);
        let again = s.send(followup_prompt("Error: missing tags", &initial.robot_at, "empty", &plan, None)).unwrap().0;
        assert_eq!(again, UNPARSEABLE_REPLY);
    }

    #[test]
    fn unknown_prompt_is_an_error() {
        let (_, _, task) = fork_task();
        let oracle = OracleBackend::new(OracleConfig::default(), task);
        let req = ChatRequest::new(ModuleRole::Planner, vec![Message::user("hello")]);
        assert!(oracle.complete(&req).is_err());
        assert_eq!(Fault::parse("omit_grasp_part"), Some(Fault::OmitGraspPart));
    }
}
