//! Motion primitives modelled as options.
//!
//! Each primitive has an initialization set (its precondition), a set of
//! success outcomes and an optional Bernoulli failure model. The intra-option
//! policy is collapsed into an atomic transition. A grasp without a part
//! argument on a multi-part object has one success outcome per part, so the
//! outcome set of `grasp(obj, part)` is a subset of that of `grasp(obj)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{
    Environment, Grip, WorldState, BOARD, CHARGER, CHARGER_PLUGGED, OUTLET, PROBE, PROBE_CABLE,
    PROBE_CABLE_PLUGGED, PROBE_RACKED, RACK, TRAPDOOR_OPEN,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Location,
    Object,
    Part,
    Color,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Location => "location",
            ParamKind::Object => "object",
            ParamKind::Part => "part",
            ParamKind::Color => "color",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub optional: bool,
}

impl Param {
    fn required(name: &str, kind: ParamKind) -> Self {
        Self { name: name.to_string(), kind, optional: false }
    }

    fn optional(name: &str, kind: ParamKind) -> Self {
        Self { name: name.to_string(), kind, optional: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    MoveTo,
    Grasp,
    PutDown,
    PressButton,
    PlugIn,
    PlaceInRack,
    OpenTrapdoor,
}

/// Failure leaves the state untouched (the gripper stays as it was).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    pub probability: f64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub name: String,
    pub kind: PrimitiveKind,
    pub params: Vec<Param>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureModel>,
    /// Python-style signature shown to the executor.
    pub header: String,
    pub doc: String,
    pub example: String,
}

impl PrimitiveSpec {
    fn min_arity(&self) -> usize {
        self.params.iter().filter(|p| !p.optional).count()
    }

    pub fn failure_probability(&self) -> f64 {
        self.failure.as_ref().map_or(0.0, |f| f.probability)
    }
}

/// Precondition violations. The `Display` text is sent to the model verbatim.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    #[error("location {location} does not exist")]
    UnknownLocation { location: String },
    #[error("object {object} does not exist")]
    UnknownObject { object: String },
    #[error("{object} has no part named {part}")]
    UnknownPart { object: String, part: String },
    #[error("there is no {color} button")]
    UnknownColor { color: String },
    #[error("gripper already holds {held}")]
    GripperOccupied { held: String },
    #[error("robot is not at the {object}'s location")]
    NotColocated { object: String, location: String },
    #[error("gripper does not hold the {object}")]
    NotHolding { object: String },
    #[error("robot is not at the {location}")]
    NotAtLocation { location: String },
    #[error("{object} is grasped by the wrong part")]
    WrongPart { object: String, required: String },
    #[error("the {object} cannot be plugged into the {target}")]
    NotPluggable { object: String, target: String },
    #[error("the {object} has no rack")]
    NoRack { object: String },
    #[error("gripper must be empty to {action}")]
    GripperNotEmpty { action: String, held: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArgumentError {
    #[error("{primitive} expects {expected} argument(s), got {got}")]
    Arity { primitive: String, expected: String, got: usize },
    #[error("{primitive}: {value:?} is not a {expected}")]
    Kind { primitive: String, value: String, expected: ParamKind },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallError {
    #[error("unknown function {0}")]
    UnknownPrimitive(String),
    #[error(transparent)]
    Argument(ArgumentError),
    #[error(transparent)]
    Precondition(Violation),
}

impl From<Violation> for CallError {
    fn from(v: Violation) -> Self {
        CallError::Precondition(v)
    }
}

impl From<ArgumentError> for CallError {
    fn from(e: ArgumentError) -> Self {
        CallError::Argument(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecOutcome {
    Success(WorldState),
    PreconditionViolation(CallError),
    StochasticFailure { message: String, state: WorldState },
}

impl ExecOutcome {
    pub fn state(&self) -> Option<&WorldState> {
        match self {
            ExecOutcome::Success(s) | ExecOutcome::StochasticFailure { state: s, .. } => Some(s),
            ExecOutcome::PreconditionViolation(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("no primitive named {0}")]
    Unknown(String),
    #[error("failure probability {0} is outside [0, 1]")]
    Probability(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub primitives: Vec<PrimitiveSpec>,
}

pub const DEFAULT_GRASP_FAILURE: f64 = 0.10;
pub const GRASP_FAILED: &str = "grasp failed";

impl Registry {
    pub fn get(&self, name: &str) -> Option<&PrimitiveSpec> {
        self.primitives.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PrimitiveSpec> {
        self.primitives.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Sets the failure probability of one primitive (0 removes the model).
    pub fn with_failure_probability(mut self, name: &str, p: f64) -> Result<Self, RegistryError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(RegistryError::Probability(format!("{p}")));
        }
        let spec = self
            .primitives
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))?;
        let message = spec
            .failure
            .take()
            .map_or_else(|| format!("{name} failed"), |f| f.message);
        if p > 0.0 {
            spec.failure = Some(FailureModel { probability: p, message });
        } else {
            spec.failure = None;
        }
        Ok(self)
    }
}

fn spec(
    name: &str,
    kind: PrimitiveKind,
    params: Vec<Param>,
    header: &str,
    doc: &str,
    example: &str,
) -> PrimitiveSpec {
    PrimitiveSpec {
        name: name.to_string(),
        kind,
        params,
        failure: None,
        header: header.to_string(),
        doc: doc.to_string(),
        example: example.to_string(),
    }
}

fn grasp_spec(p: f64, example: &str) -> PrimitiveSpec {
    let mut grasp = spec(
        "grasp",
        PrimitiveKind::Grasp,
        vec![Param::required("obj", ParamKind::Object), Param::optional("part", ParamKind::Part)],
        "def grasp(obj: str, part: str = None) -> None",
        "Grasp an object at the robot's location, optionally by one of its parts. The gripper must be empty.",
        example,
    );
    if p > 0.0 {
        grasp.failure = Some(FailureModel { probability: p, message: GRASP_FAILED.to_string() });
    }
    grasp
}

/// `move_to`, `grasp` (10% failure) and `put_down`.
pub fn service_registry() -> Registry {
    Registry {
        primitives: vec![
            spec(
                "move_to",
                PrimitiveKind::MoveTo,
                vec![Param::required("location", ParamKind::Location)],
                "def move_to(location: str) -> None",
                "Move the robot to a location.",
                "move_to('shelf')",
            ),
            grasp_spec(DEFAULT_GRASP_FAILURE, "grasp('bottle')"),
            spec(
                "put_down",
                PrimitiveKind::PutDown,
                vec![
                    Param::required("obj", ParamKind::Object),
                    Param::required("location", ParamKind::Location),
                ],
                "def put_down(obj: str, location: str) -> None",
                "Put the object held in the gripper down on a location. The robot must be at that location.",
                "put_down('bottle', 'shelf')",
            ),
        ],
    }
}

/// Task-board skills. No primitive fails stochastically by default.
pub fn industrial_registry() -> Registry {
    Registry {
        primitives: vec![
            grasp_spec(0.0, "grasp('mug', 'handle')"),
            spec(
                "press_button",
                PrimitiveKind::PressButton,
                vec![Param::required("color", ParamKind::Color)],
                "def press_button(color: str) -> None",
                "Press the button of the given color on the task board. The gripper must be empty.",
                "press_button('blue')",
            ),
            spec(
                "plug_in",
                PrimitiveKind::PlugIn,
                vec![
                    Param::required("obj", ParamKind::Object),
                    Param::required("target", ParamKind::Location),
                ],
                "def plug_in(obj: str, target: str) -> None",
                "Plug the object held in the gripper into a target.",
                "plug_in('lamp', 'socket')",
            ),
            spec(
                "place_in_rack",
                PrimitiveKind::PlaceInRack,
                vec![Param::required("obj", ParamKind::Object)],
                "def place_in_rack(obj: str) -> None",
                "Put the object held in the gripper in its rack.",
                "place_in_rack('multimeter')",
            ),
            spec(
                "open_trapdoor",
                PrimitiveKind::OpenTrapdoor,
                Vec::new(),
                "def open_trapdoor() -> None",
                "Open the trapdoor of the task board. The gripper must be empty.",
                "open_trapdoor()",
            ),
        ],
    }
}

/// One header block per primitive: doc comment, signature, usage example.
pub fn skill_headers(registry: &Registry) -> String {
    let mut out = String::new();
    for (i, p) in registry.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# {}\n{}\n# Example: {}\n", p.doc, p.header, p.example));
    }
    out
}

/// Typed view of an argument list after arity and kind checks.
struct Args<'a> {
    values: &'a [String],
}

impl<'a> Args<'a> {
    fn get(&self, i: usize) -> Option<&'a str> {
        self.values.get(i).map(String::as_str)
    }
}

fn check_args<'a>(
    spec: &PrimitiveSpec,
    env: &Environment,
    args: &'a [String],
) -> Result<Args<'a>, CallError> {
    let min = spec.min_arity();
    let max = spec.params.len();
    if args.len() < min || args.len() > max {
        let expected = if min == max { format!("{min}") } else { format!("{min} or {max}") };
        return Err(ArgumentError::Arity { primitive: spec.name.clone(), expected, got: args.len() }.into());
    }
    let is_location = |v: &str| env.has_location(v);
    let is_object = |v: &str| env.object(v).is_some();
    let is_color = |v: &str| env.button_colors().any(|c| c == v);
    for (param, value) in spec.params.iter().zip(args) {
        let value = value.as_str();
        let kind_error = || ArgumentError::Kind {
            primitive: spec.name.clone(),
            value: value.to_string(),
            expected: param.kind,
        };
        match param.kind {
            ParamKind::Location if !is_location(value) => {
                if is_object(value) || is_color(value) {
                    return Err(kind_error().into());
                }
                return Err(Violation::UnknownLocation { location: value.to_string() }.into());
            }
            ParamKind::Object if !is_object(value) => {
                if is_location(value) || is_color(value) {
                    return Err(kind_error().into());
                }
                return Err(Violation::UnknownObject { object: value.to_string() }.into());
            }
            ParamKind::Color if !is_color(value) => {
                if is_location(value) || is_object(value) {
                    return Err(kind_error().into());
                }
                return Err(Violation::UnknownColor { color: value.to_string() }.into());
            }
            // parts are checked against their object below
            _ => {}
        }
    }
    Ok(Args { values: args })
}

fn require_empty_gripper(state: &WorldState, action: &str) -> Result<(), Violation> {
    match &state.gripper {
        Some(g) => Err(Violation::GripperNotEmpty { action: action.to_string(), held: g.object.clone() }),
        None => Ok(()),
    }
}

fn require_holding(state: &WorldState, object: &str) -> Result<(), Violation> {
    if state.holds(object) {
        Ok(())
    } else {
        Err(Violation::NotHolding { object: object.to_string() })
    }
}

fn require_part(state: &WorldState, object: &str, part: &str) -> Result<(), Violation> {
    require_holding(state, object)?;
    match state.gripper.as_ref().and_then(|g| g.part.as_deref()) {
        Some(p) if p == part => Ok(()),
        _ => Err(Violation::WrongPart { object: object.to_string(), required: part.to_string() }),
    }
}

/// Which object may be plugged into which target, by which part, and the
/// fluent it sets.
const PLUG_RULES: [(&str, &str, &str, &str); 2] = [
    (CHARGER, OUTLET, "plug", CHARGER_PLUGGED),
    (PROBE_CABLE, BOARD, "plug", PROBE_CABLE_PLUGGED),
];

/// Objects with a rack: object, grasp part, fluent.
const RACK_RULES: [(&str, &str, &str); 1] = [(PROBE, "handle", PROBE_RACKED)];

fn precondition(spec: &PrimitiveSpec, state: &WorldState, env: &Environment, args: &Args<'_>) -> Result<(), CallError> {
    match spec.kind {
        PrimitiveKind::MoveTo => Ok(()),
        PrimitiveKind::Grasp => {
            let object = args.get(0).unwrap_or_default();
            if let Some(part) = args.get(1) {
                let item = env.object(object).expect("checked object");
                if !item.has_part(part) {
                    return Err(Violation::UnknownPart { object: object.to_string(), part: part.to_string() }.into());
                }
            }
            if let Some(g) = &state.gripper {
                return Err(Violation::GripperOccupied { held: g.object.clone() }.into());
            }
            match state.location_of(object) {
                Some(loc) if loc == state.robot_at => Ok(()),
                Some(loc) => Err(Violation::NotColocated {
                    object: object.to_string(),
                    location: loc.to_string(),
                }
                .into()),
                None => Err(Violation::NotColocated { object: object.to_string(), location: String::new() }.into()),
            }
        }
        PrimitiveKind::PutDown => {
            let object = args.get(0).unwrap_or_default();
            let location = args.get(1).unwrap_or_default();
            require_holding(state, object)?;
            if state.robot_at != location {
                return Err(Violation::NotAtLocation { location: location.to_string() }.into());
            }
            Ok(())
        }
        PrimitiveKind::PressButton => Ok(require_empty_gripper(state, "press a button")?),
        PrimitiveKind::OpenTrapdoor => Ok(require_empty_gripper(state, "open the trapdoor")?),
        PrimitiveKind::PlugIn => {
            let object = args.get(0).unwrap_or_default();
            let target = args.get(1).unwrap_or_default();
            let Some((_, _, part, _)) = PLUG_RULES.iter().find(|r| r.0 == object && r.1 == target) else {
                return Err(Violation::NotPluggable { object: object.to_string(), target: target.to_string() }.into());
            };
            Ok(require_part(state, object, part)?)
        }
        PrimitiveKind::PlaceInRack => {
            let object = args.get(0).unwrap_or_default();
            let Some((_, part, _)) = RACK_RULES.iter().find(|r| r.0 == object) else {
                return Err(Violation::NoRack { object: object.to_string() }.into());
            };
            Ok(require_part(state, object, part)?)
        }
    }
}

/// Ok iff `state` lies in the primitive's initialization set for `args`.
pub fn check_precondition(
    spec: &PrimitiveSpec,
    state: &WorldState,
    env: &Environment,
    args: &[String],
) -> Result<(), CallError> {
    let args = check_args(spec, env, args)?;
    precondition(spec, state, env, &args)
}

/// Every success outcome of the primitive from `state`, in catalog order.
/// Errors when the precondition fails.
pub fn success_outcomes(
    spec: &PrimitiveSpec,
    state: &WorldState,
    env: &Environment,
    args: &[String],
) -> Result<Vec<WorldState>, CallError> {
    let args = check_args(spec, env, args)?;
    precondition(spec, state, env, &args)?;
    let mut next = state.clone();
    let outcomes = match spec.kind {
        PrimitiveKind::MoveTo => {
            next.robot_at = args.get(0).unwrap_or_default().to_string();
            vec![next]
        }
        PrimitiveKind::Grasp => {
            let object = args.get(0).unwrap_or_default();
            next.placements.remove(object);
            let item = env.object(object).expect("checked object");
            let parts: Vec<Option<String>> = match args.get(1) {
                Some(part) => vec![Some(part.to_string())],
                None if item.parts.is_empty() => vec![None],
                None => item.parts.iter().cloned().map(Some).collect(),
            };
            parts
                .into_iter()
                .map(|part| {
                    let mut s = next.clone();
                    s.gripper = Some(Grip { object: object.to_string(), part });
                    s
                })
                .collect()
        }
        PrimitiveKind::PutDown => {
            let object = args.get(0).unwrap_or_default();
            let location = args.get(1).unwrap_or_default();
            next.gripper = None;
            next.placements.insert(object.to_string(), location.to_string());
            vec![next]
        }
        PrimitiveKind::PressButton => {
            let color = args.get(0).unwrap_or_default();
            next.set_fluent(&format!("button_{color}_pressed"), true);
            vec![next]
        }
        PrimitiveKind::OpenTrapdoor => {
            next.set_fluent(TRAPDOOR_OPEN, true);
            vec![next]
        }
        PrimitiveKind::PlugIn => {
            let object = args.get(0).unwrap_or_default();
            let target = args.get(1).unwrap_or_default();
            let rule = PLUG_RULES.iter().find(|r| r.0 == object && r.1 == target).expect("checked rule");
            next.gripper = None;
            next.placements.insert(object.to_string(), target.to_string());
            next.set_fluent(rule.3, true);
            vec![next]
        }
        PrimitiveKind::PlaceInRack => {
            let object = args.get(0).unwrap_or_default();
            let rule = RACK_RULES.iter().find(|r| r.0 == object).expect("checked rule");
            next.gripper = None;
            next.placements.insert(object.to_string(), RACK.to_string());
            next.set_fluent(rule.2, true);
            vec![next]
        }
    };
    Ok(outcomes)
}

/// Runs the primitive. A failed precondition is an outcome, not an error.
///
/// The rng is only consulted when the primitive has a failure model or
/// several success outcomes, so deterministic primitives never shift the
/// random stream.
pub fn execute<R: RngCore + ?Sized>(
    spec: &PrimitiveSpec,
    state: &WorldState,
    env: &Environment,
    args: &[String],
    rng: &mut R,
) -> ExecOutcome {
    let mut outcomes = match success_outcomes(spec, state, env, args) {
        Ok(o) => o,
        Err(e) => return ExecOutcome::PreconditionViolation(e),
    };
    if let Some(failure) = &spec.failure {
        if failure.probability > 0.0 && rng.gen_bool(failure.probability) {
            return ExecOutcome::StochasticFailure { message: failure.message.clone(), state: state.clone() };
        }
    }
    let pick = if outcomes.len() > 1 { rng.gen_range(0..outcomes.len()) } else { 0 };
    ExecOutcome::Success(outcomes.swap_remove(pick))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_service_env, build_taskboard_env, validate_state};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn holding(state: &WorldState, object: &str, part: Option<&str>) -> WorldState {
        let mut st = state.clone();
        st.placements.remove(object);
        st.gripper = Some(Grip { object: object.into(), part: part.map(Into::into) });
        st
    }

    #[test]
    fn grasp_with_full_gripper() {
        let env = build_service_env();
        let reg = service_registry();
        let mut state = env.initial.clone();
        state.robot_at = "Desk".into();
        state.placements.insert("Knife".into(), "Desk".into());
        let state = holding(&state, "Fork", None);
        let err = check_precondition(reg.get("grasp").unwrap(), &state, &env, &s(&["Knife"])).unwrap_err();
        assert_eq!(err.to_string(), "gripper already holds Fork");
    }

    #[test]
    fn grasp_ok_when_colocated_and_empty() {
        let env = build_service_env();
        let reg = service_registry();
        let mut state = env.initial.clone();
        state.robot_at = "Desk".into();
        state.placements.insert("Knife".into(), "Desk".into());
        assert!(check_precondition(reg.get("grasp").unwrap(), &state, &env, &s(&["Knife"])).is_ok());
    }

    #[test]
    fn grasp_requires_colocation() {
        let env = build_service_env();
        let reg = service_registry();
        let mut state = env.initial.clone();
        state.robot_at = "Desk".into();
        state.placements.insert("Knife".into(), "Coffee table".into());
        let err = check_precondition(reg.get("grasp").unwrap(), &state, &env, &s(&["Knife"])).unwrap_err();
        assert_eq!(err.to_string(), "robot is not at the Knife's location");
        assert_eq!(
            err,
            CallError::Precondition(Violation::NotColocated { object: "Knife".into(), location: "Coffee table".into() })
        );
    }

    #[test]
    fn argument_errors_are_distinct() {
        let env = build_service_env();
        let reg = service_registry();
        let grasp = reg.get("grasp").unwrap();
        let err = check_precondition(grasp, &env.initial, &env, &s(&["Knife", "blade", "extra"])).unwrap_err();
        assert!(matches!(err, CallError::Argument(ArgumentError::Arity { got: 3, .. })));
        assert_eq!(err.to_string(), "grasp expects 1 or 2 argument(s), got 3");
        let err = check_precondition(grasp, &env.initial, &env, &s(&["Desk"])).unwrap_err();
        assert!(matches!(err, CallError::Argument(ArgumentError::Kind { .. })));
        let err = check_precondition(reg.get("move_to").unwrap(), &env.initial, &env, &s(&["Garage"])).unwrap_err();
        assert_eq!(err.to_string(), "location Garage does not exist");
    }

    #[test]
    fn move_to_only_changes_robot_position() {
        let env = build_service_env();
        let reg = service_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = execute(reg.get("move_to").unwrap(), &env.initial, &env, &s(&["Desk"]), &mut rng);
        let ExecOutcome::Success(next) = out else { panic!("{out:?}") };
        let mut expected = env.initial.clone();
        expected.robot_at = "Desk".into();
        assert_eq!(next, expected);
    }

    #[test]
    fn put_down_rules() {
        let env = build_service_env();
        let reg = service_registry();
        let put = reg.get("put_down").unwrap();
        let mut state = holding(&env.initial, "Fork", None);
        state.robot_at = "Desk".into();
        let err = check_precondition(put, &state, &env, &s(&["Fork", "Table"])).unwrap_err();
        assert_eq!(err.to_string(), "robot is not at the Table");
        let err = check_precondition(put, &env.initial, &env, &s(&["Fork", "Desk"])).unwrap_err();
        assert_eq!(err.to_string(), "gripper does not hold the Fork");
        let outs = success_outcomes(put, &state, &env, &s(&["Fork", "Desk"])).unwrap();
        assert_eq!(outs.len(), 1);
        assert_eq!(outs[0].location_of("Fork"), Some("Desk"));
        assert!(outs[0].gripper.is_none());
    }

    #[test]
    fn industrial_plug_and_rack() {
        let env = build_taskboard_env();
        let reg = industrial_registry();
        let plug = reg.get("plug_in").unwrap();
        let by_cable = holding(&env.initial, CHARGER, Some("cable"));
        let err = check_precondition(plug, &by_cable, &env, &s(&[CHARGER, OUTLET])).unwrap_err();
        assert_eq!(err.to_string(), "charger is grasped by the wrong part");

        let by_plug = holding(&env.initial, CHARGER, Some("plug"));
        let outs = success_outcomes(plug, &by_plug, &env, &s(&[CHARGER, OUTLET])).unwrap();
        assert!(outs[0].fluent(CHARGER_PLUGGED));
        let err = check_precondition(plug, &by_plug, &env, &s(&[CHARGER, BOARD])).unwrap_err();
        assert!(matches!(err, CallError::Precondition(Violation::NotPluggable { .. })));

        let probe = holding(&env.initial, PROBE, Some("handle"));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = execute(reg.get("place_in_rack").unwrap(), &probe, &env, &s(&[PROBE]), &mut rng);
        let ExecOutcome::Success(next) = out else { panic!() };
        assert!(next.fluent(PROBE_RACKED));
        assert!(validate_state(&next, &env).is_empty());
    }

    #[test]
    fn press_button_and_trapdoor_need_empty_gripper() {
        let env = build_taskboard_env();
        let reg = industrial_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute(reg.get("press_button").unwrap(), &env.initial, &env, &s(&["blue"]), &mut rng);
        let ExecOutcome::Success(next) = out else { panic!() };
        assert!(next.fluent("button_blue_pressed"));
        let held = holding(&env.initial, PROBE, Some("body"));
        let err = check_precondition(reg.get("press_button").unwrap(), &held, &env, &s(&["red"])).unwrap_err();
        assert_eq!(err.to_string(), "gripper must be empty to press a button");
        let err = check_precondition(reg.get("open_trapdoor").unwrap(), &held, &env, &[]).unwrap_err();
        assert_eq!(err.to_string(), "gripper must be empty to open the trapdoor");
        let err = check_precondition(reg.get("press_button").unwrap(), &env.initial, &env, &s(&["green"])).unwrap_err();
        assert_eq!(err.to_string(), "there is no green button");
    }

    #[test]
    fn unparameterized_grasp_enumerates_parts() {
        let env = build_taskboard_env();
        let reg = industrial_registry();
        let grasp = reg.get("grasp").unwrap();
        let outs = success_outcomes(grasp, &env.initial, &env, &s(&[CHARGER])).unwrap();
        let parts: Vec<_> = outs.iter().map(|o| o.gripper.as_ref().unwrap().part.clone().unwrap()).collect();
        assert_eq!(parts, ["plug", "cable"]);
        let err = check_precondition(grasp, &env.initial, &env, &s(&[CHARGER, "handle"])).unwrap_err();
        assert_eq!(err.to_string(), "charger has no part named handle");
    }

    #[test]
    fn failure_probability_bounds() {
        assert!(service_registry().with_failure_probability("grasp", 1.5).is_err());
        assert!(service_registry().with_failure_probability("fly", 0.5).is_err());
        let reg = service_registry().with_failure_probability("grasp", 0.0).unwrap();
        assert_eq!(reg.get("grasp").unwrap().failure_probability(), 0.0);
        let reg = industrial_registry().with_failure_probability("grasp", 0.25).unwrap();
        assert_eq!(reg.get("grasp").unwrap().failure.as_ref().unwrap().message, "grasp failed");
    }

    #[test]
    fn headers() {
        let service = skill_headers(&service_registry());
        assert_eq!(service.matches("def move_to(").count(), 1);
        assert_eq!(service.lines().filter(|l| l.starts_with("def ")).count(), 3);
        let industrial = skill_headers(&industrial_registry());
        assert!(industrial.contains("def press_button(color: str)"));
        assert!(industrial.contains("press_button('blue')"));
        assert_eq!(skill_headers(&Registry::default()), "");
    }
}
