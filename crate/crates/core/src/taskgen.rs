//! Pick-and-place corpus generation and hand-authored industrial tasks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatBackend, ChatSession, GatewayError, ModuleRole};
use crate::parser::PrimitiveCall;
use crate::prompts::paraphrase_prompt;
use crate::seed::derive_seed;
use crate::world::{
    Environment, GoalSpec, WorldState, BOARD, BUTTON_BLUE_PRESSED, BUTTON_RED_PRESSED, CHARGER,
    CHARGER_PLUGGED, OUTLET, PROBE, PROBE_CABLE, PROBE_CABLE_PLUGGED, PROBE_RACKED, TRAPDOOR_OPEN,
};

pub const TEMPLATE_COUNT: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TaskgenError {
    #[error("the environment needs at least two locations and one object")]
    ImpossibleEnv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub object: String,
    pub source: String,
    pub target: String,
    /// Instruction variants; repetition `k` of a benchmark uses variant `k`.
    pub instructions: Vec<String>,
    /// Template drawn for this task; variant 0 renders it.
    pub template_index: usize,
    pub goal: GoalSpec,
    pub initial: WorldState,
    pub seed: u64,
}

impl TaskSpec {
    pub fn instruction(&self, repetition: usize) -> &str {
        &self.instructions[repetition % self.instructions.len()]
    }
}

pub fn render_template(template_index: usize, object: &str, source: &str, target: &str) -> String {
    match template_index % TEMPLATE_COUNT {
        0 => format!("Move the {object} to the {target}. It is currently on the {source}."),
        1 => format!("Move the {object} from the {source} to the {target}"),
        _ => format!("Put the {object} on the {target}. The {object} is on the {source}."),
    }
}

pub fn render_instruction(spec: &TaskSpec, template_index: usize) -> String {
    render_template(template_index, &spec.object, &spec.source, &spec.target)
}

/// `n` tasks drawn uniformly (object, source, target) with source ≠ target.
///
/// Each task's initial state puts the object at its source, the robot at the
/// first catalog location that is neither source nor target, and every other
/// object on a location from a seeded shuffle.
pub fn generate_corpus(env: &Environment, n: usize, seed: u64) -> Result<Vec<TaskSpec>, TaskgenError> {
    if env.locations.len() < 2 || env.objects.is_empty() {
        return Err(TaskgenError::ImpossibleEnv);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let task_seed = derive_seed(seed, &[i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let object = env.objects[rng.gen_range(0..env.objects.len())].name.clone();
        let src = rng.gen_range(0..env.locations.len());
        let mut dst = rng.gen_range(0..env.locations.len() - 1);
        if dst >= src {
            dst += 1;
        }
        let source = env.locations[src].name.clone();
        let target = env.locations[dst].name.clone();
        let template_index = rng.gen_range(0..TEMPLATE_COUNT);

        let mut shuffled: Vec<&str> = env.locations.iter().map(|l| l.name.as_str()).collect();
        shuffled.shuffle(&mut rng);
        let mut initial = env.initial.clone();
        initial.gripper = None;
        initial.placements.clear();
        for (j, obj) in env.objects.iter().enumerate() {
            let at = if obj.name == object { source.as_str() } else { shuffled[j % shuffled.len()] };
            initial.placements.insert(obj.name.clone(), at.to_string());
        }
        initial.robot_at = env
            .locations
            .iter()
            .map(|l| l.name.as_str())
            .find(|l| *l != source && *l != target)
            .unwrap_or(source.as_str())
            .to_string();

        let instructions = (0..TEMPLATE_COUNT)
            .map(|k| render_template(template_index + k, &object, &source, &target))
            .collect();
        out.push(TaskSpec {
            id: format!("task-{i:03}"),
            goal: GoalSpec::object_at(object.clone(), target.clone()),
            object,
            source,
            target,
            instructions,
            template_index,
            initial,
            seed: task_seed,
        });
    }
    Ok(out)
}

/// One primitive per consecutive pair of ground-truth subgoals.
pub fn ground_truth_chain(spec: &TaskSpec) -> Vec<PrimitiveCall> {
    vec![
        PrimitiveCall::new("move_to", &[&spec.source]),
        PrimitiveCall::new("grasp", &[&spec.object]),
        PrimitiveCall::new("move_to", &[&spec.target]),
        PrimitiveCall::new("put_down", &[&spec.object, &spec.target]),
    ]
}

/// True iff `text` names the object, source and target verbatim.
pub fn mentions_all(text: &str, spec: &TaskSpec) -> bool {
    text.contains(spec.object.as_str()) && text.contains(spec.source.as_str()) && text.contains(spec.target.as_str())
}

/// Replaces instruction variants 1 and 2 with model paraphrases of variant
/// 0. A paraphrase that drops a name is requested again, up to `retries`
/// extra times, then the template rendering is kept.
pub fn paraphrase_corpus(
    corpus: &[TaskSpec],
    backend: &dyn ChatBackend,
    retries: usize,
) -> Result<Vec<TaskSpec>, GatewayError> {
    let mut out = Vec::with_capacity(corpus.len());
    for spec in corpus {
        let mut spec = spec.clone();
        let base = render_instruction(&spec, spec.template_index);
        let mut variants = vec![base.clone()];
        for k in 1..TEMPLATE_COUNT {
            let mut accepted = None;
            for _ in 0..=retries {
                let mut session = ChatSession::new(ModuleRole::Paraphrase, backend);
                let prompt = paraphrase_prompt(&base, &spec.object, &spec.source, &spec.target);
                let (text, _) = session.send(prompt)?;
                let text = text.trim();
                if mentions_all(text, &spec) && !variants.iter().any(|v| v == text) {
                    accepted = Some(text.to_string());
                    break;
                }
            }
            variants.push(accepted.unwrap_or_else(|| render_instruction(&spec, spec.template_index + k)));
        }
        spec.instructions = variants;
        out.push(spec);
    }
    Ok(out)
}

/// Best-effort reading of a free-form pick-and-place instruction: the
/// object and the two locations it names, the source being the location
/// introduced by "from the", "is on the", "currently on the", ...
pub fn infer_task(env: &Environment, instruction: &str) -> Option<(String, String, String)> {
    let object = env
        .objects
        .iter()
        .filter(|o| instruction.contains(o.name.as_str()))
        .max_by_key(|o| o.name.len())?
        .name
        .clone();
    // longest names first so "Table" does not shadow "Kitchen table"
    let mut names: Vec<&str> = env.locations.iter().map(|l| l.name.as_str()).collect();
    names.sort_by_key(|n| core::cmp::Reverse(n.len()));
    let mut found: Vec<(usize, &str)> = Vec::new();
    let mut taken = vec![false; instruction.len()];
    for name in names {
        let mut from = 0;
        while let Some(pos) = instruction[from..].find(name) {
            let at = from + pos;
            if !taken[at..at + name.len()].iter().any(|t| *t) {
                taken[at..at + name.len()].iter_mut().for_each(|t| *t = true);
                found.push((at, name));
            }
            from = at + name.len();
        }
    }
    found.sort();
    found.dedup_by(|a, b| a.1 == b.1);
    if found.len() != 2 {
        return None;
    }
    const SOURCE_CUES: [&str; 5] = ["from the ", "is on the ", "currently on the ", "is now on the ", "It is on the "];
    let is_source = |(at, _): &(usize, &str)| SOURCE_CUES.iter().any(|cue| instruction[..*at].ends_with(cue));
    let (source, target) = match (is_source(&found[0]), is_source(&found[1])) {
        (true, false) => (found[0].1, found[1].1),
        (false, true) => (found[1].1, found[0].1),
        _ => return None,
    };
    Some((object, source.to_string(), target.to_string()))
}

/// Builds a task for a free-form instruction: the object starts at the
/// inferred source and the rest of the catalog state is kept.
pub fn task_from_instruction(env: &Environment, instruction: &str, seed: u64) -> Option<TaskSpec> {
    let (object, source, target) = infer_task(env, instruction)?;
    let mut initial = env.initial.clone();
    initial.placements.insert(object.clone(), source.clone());
    if initial.robot_at == source || initial.robot_at == target {
        if let Some(l) = env.locations.iter().find(|l| l.name != source && l.name != target) {
            initial.robot_at = l.name.clone();
        }
    }
    Some(TaskSpec {
        id: "instruction".to_string(),
        goal: GoalSpec::object_at(object.clone(), target.clone()),
        object,
        source,
        target,
        instructions: vec![instruction.to_string()],
        template_index: 0,
        initial,
        seed,
    })
}

/// Hand-authored task for the task-board environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndustrialTask {
    pub id: String,
    pub instruction: String,
    pub goal: GoalSpec,
    pub chain: Vec<PrimitiveCall>,
}

pub fn charger_task() -> IndustrialTask {
    IndustrialTask {
        id: "charger".to_string(),
        instruction: "Plug the charger into the outlet".to_string(),
        goal: GoalSpec::sequence(&[CHARGER_PLUGGED]),
        chain: vec![
            PrimitiveCall::new("grasp", &[CHARGER, "plug"]),
            PrimitiveCall::new("plug_in", &[CHARGER, OUTLET]),
        ],
    }
}

pub fn probe_task() -> IndustrialTask {
    IndustrialTask {
        id: "probe".to_string(),
        instruction: "Put the probe in its rack".to_string(),
        goal: GoalSpec::sequence(&[PROBE_RACKED]),
        chain: vec![PrimitiveCall::new("grasp", &[PROBE, "handle"]), PrimitiveCall::new("place_in_rack", &[PROBE])],
    }
}

pub fn taskboard_task() -> IndustrialTask {
    IndustrialTask {
        id: "taskboard".to_string(),
        instruction: "Press the blue button, plug in the probe cable, press the red button and open the trapdoor"
            .to_string(),
        goal: GoalSpec::sequence(&[BUTTON_BLUE_PRESSED, PROBE_CABLE_PLUGGED, BUTTON_RED_PRESSED, TRAPDOOR_OPEN]),
        chain: vec![
            PrimitiveCall::new("press_button", &["blue"]),
            PrimitiveCall::new("grasp", &[PROBE_CABLE, "plug"]),
            PrimitiveCall::new("plug_in", &[PROBE_CABLE, BOARD]),
            PrimitiveCall::new("press_button", &["red"]),
            PrimitiveCall::new("open_trapdoor", &[]),
        ],
    }
}

pub fn industrial_tasks() -> Vec<IndustrialTask> {
    vec![charger_task(), probe_task(), taskboard_task()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use crate::world::{build_service_env, validate_state, Location};

    fn spec(object: &str, source: &str, target: &str) -> TaskSpec {
        let env = build_service_env();
        TaskSpec {
            id: "t".into(),
            object: object.into(),
            source: source.into(),
            target: target.into(),
            instructions: Vec::new(),
            template_index: 0,
            goal: GoalSpec::object_at(object, target),
            initial: env.initial,
            seed: 0,
        }
    }

    #[test]
    fn templates_match_samples() {
        assert_eq!(
            render_instruction(&spec("Water Glass", "Kitchen table", "Coffee table"), 0),
            "Move the Water Glass to the Coffee table. It is currently on the Kitchen table."
        );
        assert_eq!(
            render_instruction(&spec("Pills", "Desk", "Kitchen counter"), 1),
            "Move the Pills from the Desk to the Kitchen counter"
        );
        assert_eq!(
            render_instruction(&spec("Mouse", "Desk", "Table"), 2),
            "Put the Mouse on the Table. The Mouse is on the Desk."
        );
    }

    #[test]
    fn corpus_is_reproducible_and_valid() {
        let env = build_service_env();
        let a = generate_corpus(&env, 50, 7).unwrap();
        assert_eq!(a, generate_corpus(&env, 50, 7).unwrap());
        assert_ne!(a, generate_corpus(&env, 50, 8).unwrap());
        for t in &a {
            assert_ne!(t.source, t.target);
            assert_eq!(t.initial.location_of(&t.object), Some(t.source.as_str()));
            assert!(validate_state(&t.initial, &env).is_empty());
            assert_eq!(t.instructions.len(), 3);
            assert!(t.instructions.iter().all(|i| mentions_all(i, t)));
            assert_eq!(ground_truth_chain(t).len(), 4);
        }
    }

    #[test]
    fn one_location_is_impossible() {
        let mut env = build_service_env();
        env.locations = vec![Location::new("Desk")];
        assert_eq!(generate_corpus(&env, 5, 1), Err(TaskgenError::ImpossibleEnv));
    }

    #[test]
    fn paraphrases_are_validated() {
        let env = build_service_env();
        let corpus = generate_corpus(&env, 1, 3).unwrap();
        let t = &corpus[0];
        let good = format!("Carry the {} over to the {}; right now it sits on the {}.", t.object, t.target, t.source);
        let backend = ScriptedBackend::new([format!("Carry the {} somewhere", t.object), good.clone()]);
        let out = paraphrase_corpus(&corpus, &backend, 2).unwrap();
        assert_eq!(out[0].instructions[1], good);
        // the scripted backend keeps repeating `good`, a duplicate, so variant 2 falls back
        assert_eq!(out[0].instructions[2], render_instruction(t, t.template_index + 2));
        assert_eq!(backend.calls(), 2 + 3);
    }

    #[test]
    fn infers_free_instructions() {
        let env = build_service_env();
        let cases = [
            ("Move the Fork to the Desk. It is on the Table.", ("Fork", "Table", "Desk")),
            ("Move the Pills from the Desk to the Kitchen counter", ("Pills", "Desk", "Kitchen counter")),
            ("Retrieve the Knife from the Coffee table and place it on the Desk.", ("Knife", "Coffee table", "Desk")),
            ("Set the Screwdriver down on the Coffee table. It is now on the Desk.", ("Screwdriver", "Desk", "Coffee table")),
            ("Take the Cupcake and put it on the Desk. The Cupcake is on the Table.", ("Cupcake", "Table", "Desk")),
        ];
        for (text, (o, s, t)) in cases {
            assert_eq!(infer_task(&env, text), Some((o.into(), s.into(), t.into())), "{text}");
        }
        assert_eq!(infer_task(&env, "Dance"), None);
    }
}
