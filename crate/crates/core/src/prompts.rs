//! Prompt templates and placeholder substitution.
//!
//! Placeholders are `{Name}` with an ASCII identifier inside the braces.
//! Substitution is a single pass: bound values are never rescanned, so
//! braces inside a value (a Python dictionary, say) are inserted verbatim.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::parser::{eo_template, plan_literal, ExpectedOutcomes};
use crate::pyrepr;
use crate::world::{Environment, WorldState};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("placeholder {{{0}}} is not bound")]
    UnboundPlaceholder(String),
}

pub const PLANNER_TEMPLATE: &str = "You are in charge of a mobile robot with an arm ending in a gripper. \
Your task is the following: {Task}\n\
Please output an plan, composed of simple actions, to carry out this task. Remember that the robot \
should always move to a location before interacting with objects in this location, unless it is \
already there. However, you can assume that simple actions (such as grasping or putting down \
objects) automatically move the arm to the correct position.\n\
Please only output the plan as a tuple of strings, where each step is a string, without any other text.";

pub const EO_TEMPLATE: &str = "You are in charge of executing the following task: {Task}. The plan \
consists of the following steps: {Plan} Each of the steps of the plan will be executed with a mobile \
robot equipped with an arm ending in a gripper. For each step of the plan, I need you to give the \
expected outcome of the actions involved in the step, in physical and visual terms.\n\
This should consist of one or two short, simple sentences that are a more complete and detailed \
description of the step's outcome. The sentences should describe the final state of the robot, for \
example if it should be at a location, have grasped an object (and what part of the object, if \
relevant for the task), or where an object should be put down. You can add some information if the \
plan is too concise. Here are some examples, with the plan step first and the expected outcome after:\n\
- Put bottle on shelf: The bottle should be on the shelf.\n\
- Grasp the mug: The mug should be in the robot's gripper.\n\
- Grasp the knife: The knife blade should be in the robot's gripper.\n\
For each step of the plan, please briefly describe the expected outcome as shown above. Please try \
to be concise and focus on the most relevant information. Please fill out the following python \
dictionary with the expected outcomes: {Dictionary}. Only output the dictionary and no other text.";

pub const EXECUTOR_TEMPLATE: &str = "Context:\n\
Your are now in charge of a mobile robot equipped with one arm with a parallel gripper. You will be \
given a high-level task that you will need to fulfill using this robot, and the corresponding plan, \
which is a series of simpler steps. You will need to carry out the task step by step by interacting \
with the system using some code primitives. At each step the plan will be updated and you will \
receive feedback.\n\
The skills are python functions, which allow you to perceive and act on your environment.\n\
Skills:\n\
Here are the functions and skills, with examples of the syntax:\n\
{Skills}\n\
The task and the plan:\n\
You are in charge of executing the following task: {Task}. The plan is: {Plan}\n\
{EOSection}\
{Environment}\n\
What I need you to do:\n\
Please define a function do(), which will contain mostly action primitives to solve the steps of \
the plan one by one. Please output python code, enclosed between the tags <code> and </code>. \
Please only use the functions I defined above and ensure the locations and objects that you pass \
as arguments are correct.";

const EO_SECTION_TEMPLATE: &str =
    "Here are the expected outcomes of each step in the plan, which you can use as a guide:\n{EOs}\n";

pub const FOLLOWUP_TEMPLATE: &str = "Feedback: {Status}\n\
Robot location: {Location}. Gripper: {Gripper}.\n\
The remaining plan is: {Plan}\n\
{CurrentEO}\
Please output the code for the next step of the plan, enclosed between the tags <code> and </code>.";

const CURRENT_EO_TEMPLATE: &str = "The expected outcome of the current step is: {EO}\n";

pub const CAP_TEMPLATE: &str = "Context:\n\
You are in charge of a mobile robot equipped with one arm with a parallel gripper. You will be given \
a high-level task that you will need to fulfill using this robot.\n\
Here are the functions and skills, with examples of the syntax:\n\
{Skills}\n\
The task: {Task}\n\
{Environment}\n\
What I need you to do:\n\
Please define a function do() that solves the whole task. The code will be executed once, without \
any feedback, so it must contain the full sequence of skills needed to complete the task. Please \
output python code, enclosed between the tags <code> and </code>. Please only use the functions I \
defined above and ensure the locations and objects that you pass as arguments are correct.";

pub const PARAPHRASE_TEMPLATE: &str = "Rewrite the following robot task instruction in a different \
way, keeping its meaning. The rewritten instruction must mention the {Object}, the {Source} and the \
{Target} using exactly these names. Only output the rewritten instruction.\n\
Instruction: {Instruction}";

/// Substitutes every `{Name}` in `template` from `bindings`.
pub fn render(template: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after.bytes().take_while(|b| b.is_ascii_alphanumeric() || *b == b'_').count();
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            let name = &after[..ident_len];
            let value = bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::UnboundPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[ident_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn planner_prompt(task: &str) -> String {
    render(PLANNER_TEMPLATE, &[("Task", task)]).expect("planner template bindings")
}

pub fn eo_prompt(task: &str, plan: &[String]) -> String {
    let plan_text = plan_literal(plan);
    let dict = eo_template(plan);
    render(EO_TEMPLATE, &[("Task", task), ("Plan", &plan_text), ("Dictionary", &dict)])
        .expect("eo template bindings")
}

pub fn executor_prompt(
    task: &str,
    plan: &[String],
    eos: Option<&ExpectedOutcomes>,
    skills: &str,
    environment: &str,
) -> String {
    let eo_section = match eos {
        Some(eos) => {
            render(EO_SECTION_TEMPLATE, &[("EOs", &eos.to_python())]).expect("eo section bindings")
        }
        None => String::new(),
    };
    let plan_text = plan_literal(plan);
    render(
        EXECUTOR_TEMPLATE,
        &[
            ("Skills", skills),
            ("Task", task),
            ("Plan", &plan_text),
            ("EOSection", &eo_section),
            ("Environment", environment),
        ],
    )
    .expect("executor template bindings")
}

pub fn followup_prompt(
    status: &str,
    robot_at: &str,
    gripper: &str,
    remaining: &[String],
    current_eo: Option<&str>,
) -> String {
    let current = match current_eo {
        Some(eo) => render(CURRENT_EO_TEMPLATE, &[("EO", eo)]).expect("current eo bindings"),
        None => String::new(),
    };
    let plan_text = plan_literal(remaining);
    render(
        FOLLOWUP_TEMPLATE,
        &[
            ("Status", status),
            ("Location", robot_at),
            ("Gripper", gripper),
            ("Plan", &plan_text),
            ("CurrentEO", &current),
        ],
    )
    .expect("followup template bindings")
}

pub fn cap_prompt(task: &str, skills: &str, environment: &str) -> String {
    render(CAP_TEMPLATE, &[("Skills", skills), ("Task", task), ("Environment", environment)])
        .expect("cap template bindings")
}

pub fn paraphrase_prompt(instruction: &str, object: &str, source: &str, target: &str) -> String {
    render(
        PARAPHRASE_TEMPLATE,
        &[("Object", object), ("Source", source), ("Target", target), ("Instruction", instruction)],
    )
    .expect("paraphrase template bindings")
}

/// Catalog names and the initial placements, in Python literal syntax.
pub fn environment_block(env: &Environment, initial: &WorldState) -> String {
    let mut out = String::from("Environment:\n");
    out.push_str("Locations: ");
    out.push_str(&pyrepr::list(env.locations.iter().map(|l| l.name.as_str())));
    out.push_str("\nObjects: ");
    out.push_str(&pyrepr::list(env.objects.iter().map(|o| o.name.as_str())));
    out.push('\n');
    let with_parts: Vec<_> = env.objects.iter().filter(|o| !o.parts.is_empty()).collect();
    if !with_parts.is_empty() {
        let entries: Vec<String> = with_parts
            .iter()
            .map(|o| format!("{}: {}", pyrepr::quote(&o.name), pyrepr::list(o.parts.iter().map(String::as_str))))
            .collect();
        out.push_str(&format!("Object parts: {{{}}}\n", entries.join(", ")));
    }
    let positions = pyrepr::dict(
        env.objects
            .iter()
            .filter_map(|o| initial.location_of(&o.name).map(|l| (o.name.as_str(), l))),
    );
    out.push_str(&format!("Initial positions of the objects: {positions}\n"));
    out.push_str(&format!("Initial position of the robot: {}", pyrepr::quote(&initial.robot_at)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_eo_map;
    use crate::world::{build_service_env, build_taskboard_env};
    use alloc::vec;

    fn plan4() -> Vec<String> {
        ["Move to the Table", "Grasp the Fork", "Move to the Desk", "Put down the Fork on the Desk"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn render_substitutes_once() {
        assert_eq!(render("a {X} b", &[("X", "{Y}")]).unwrap(), "a {Y} b");
        assert_eq!(render("{ not a placeholder }", &[]).unwrap(), "{ not a placeholder }");
        assert_eq!(render("{X}", &[]), Err(PromptError::UnboundPlaceholder("X".into())));
    }

    #[test]
    fn planner_prompt_asks_for_tuple() {
        let p = planner_prompt("Move the Fork to the Desk. It is on the Table.");
        assert!(p.contains("tuple of strings"));
        assert!(p.contains("Your task is the following: Move the Fork to the Desk. It is on the Table.\n"));
    }

    #[test]
    fn eo_prompt_has_dictionary_template() {
        let p = eo_prompt("Move the Fork", &plan4());
        let dict_start = p.find("expected outcomes: ").unwrap() + "expected outcomes: ".len();
        let eos = parse_eo_map(&p[dict_start..], &plan4()).unwrap();
        assert_eq!(eos.len(), 4);
        assert!(eos.entries.iter().all(|e| e.outcome.is_empty()));
    }

    #[test]
    fn executor_eo_section_is_optional() {
        let env = build_service_env();
        let block = environment_block(&env, &env.initial);
        let without = executor_prompt("t", &plan4(), None, "skills", &block);
        assert!(!without.contains("expected outcomes"));
        let eos = ExpectedOutcomes::default();
        let with = executor_prompt("t", &plan4(), Some(&eos), "skills", &block);
        assert!(with.contains("Here are the expected outcomes of each step in the plan"));
        assert!(with.contains("<code> and </code>"));
    }

    #[test]
    fn followup_carries_state_reminder() {
        let p = followup_prompt("Error: grasp failed", "workbench", "empty", &[], Some("The x should be y."));
        assert!(p.starts_with("Feedback: Error: grasp failed\nRobot location: workbench. Gripper: empty.\n"));
        assert!(p.contains("The remaining plan is: []\n"));
        assert!(p.contains("The expected outcome of the current step is: The x should be y.\n"));
        let q = followup_prompt("Done", "workbench", "empty", &vec!["a".to_string()], None);
        assert!(!q.contains("expected outcome"));
    }

    #[test]
    fn environment_block_lists_parts_only_when_present() {
        let service = build_service_env();
        assert!(!environment_block(&service, &service.initial).contains("Object parts"));
        let board = build_taskboard_env();
        let block = environment_block(&board, &board.initial);
        assert!(block.contains("Object parts: {'charger': ['plug', 'cable']"));
        assert!(block.ends_with("Initial position of the robot: 'workbench'"));
    }
}
