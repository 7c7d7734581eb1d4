//! Symbolic state space, environment catalogs and goal conditions.
//!
//! A [`WorldState`] is fully observed: where the robot is, what (and which
//! part of it) sits in the gripper, where every other object is placed and a
//! set of boolean fluents. The order in which fluents first became true is
//! kept so sequenced goals (the task board) can be checked.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
}

impl Location {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectItem {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<String>,
}

impl ObjectItem {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), parts: Vec::new() }
    }

    pub fn with_parts(name: impl Into<String>, parts: &[&str]) -> Self {
        Self { name: name.into(), parts: parts.iter().map(|p| p.to_string()).collect() }
    }

    pub fn has_part(&self, part: &str) -> bool {
        self.parts.iter().any(|p| p == part)
    }
}

/// Contents of the gripper: an object, held by one of its parts when it has any.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Grip {
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub robot_at: String,
    #[serde(default)]
    pub gripper: Option<Grip>,
    pub placements: BTreeMap<String, String>,
    #[serde(default)]
    pub fluents: BTreeMap<String, bool>,
    /// Fluents in the order they first became true.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fluent_history: Vec<String>,
}

impl WorldState {
    pub fn location_of(&self, object: &str) -> Option<&str> {
        self.placements.get(object).map(String::as_str)
    }

    pub fn holds(&self, object: &str) -> bool {
        self.gripper.as_ref().is_some_and(|g| g.object == object)
    }

    pub fn fluent(&self, name: &str) -> bool {
        self.fluents.get(name).copied().unwrap_or(false)
    }

    pub fn set_fluent(&mut self, name: &str, value: bool) {
        let was = self.fluent(name);
        self.fluents.insert(name.to_string(), value);
        if value && !was && !self.fluent_history.iter().any(|f| f == name) {
            self.fluent_history.push(name.to_string());
        }
    }

    /// Human-readable gripper contents, as shown in feedback messages.
    pub fn gripper_description(&self) -> String {
        match &self.gripper {
            None => "empty".to_string(),
            Some(Grip { object, part: None }) => alloc::format!("holding the {object}"),
            Some(Grip { object, part: Some(part) }) => {
                alloc::format!("holding the {object} by the {part}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Service,
    Industrial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub kind: EnvKind,
    pub locations: Vec<Location>,
    pub objects: Vec<ObjectItem>,
    pub initial: WorldState,
}

impl Environment {
    pub fn has_location(&self, name: &str) -> bool {
        self.locations.iter().any(|l| l.name == name)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectItem> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn has_fluent(&self, name: &str) -> bool {
        self.initial.fluents.contains_key(name)
    }

    /// Button colors, derived from the `button_<color>_pressed` fluents.
    pub fn button_colors(&self) -> impl Iterator<Item = &str> {
        self.initial
            .fluents
            .keys()
            .filter_map(|f| f.strip_prefix("button_").and_then(|r| r.strip_suffix("_pressed")))
    }

    /// Catalog-level checks: unique names, unique parts, valid initial state.
    pub fn validate(&self) -> Vec<StateViolation> {
        let mut out = Vec::new();
        for (i, loc) in self.locations.iter().enumerate() {
            if loc.name.is_empty() {
                out.push(StateViolation::EmptyName);
            }
            if self.locations[..i].iter().any(|l| l.name == loc.name) {
                out.push(StateViolation::DuplicateName(loc.name.clone()));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.name.is_empty() {
                out.push(StateViolation::EmptyName);
            }
            if self.objects[..i].iter().any(|o| o.name == obj.name) {
                out.push(StateViolation::DuplicateName(obj.name.clone()));
            }
            for (j, part) in obj.parts.iter().enumerate() {
                if obj.parts[..j].contains(part) {
                    out.push(StateViolation::DuplicateName(alloc::format!("{}.{}", obj.name, part)));
                }
            }
        }
        out.extend(validate_state(&self.initial, self));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum StateViolation {
    #[error("unknown location: {0}")]
    UnknownLocation(String),
    #[error("unknown object: {0}")]
    UnknownObject(String),
    #[error("unknown fluent: {0}")]
    UnknownFluent(String),
    #[error("unknown part: {object} has no part {part}")]
    UnknownPart { object: String, part: String },
    #[error("duplicate containment: {0} is both in the gripper and placed")]
    DuplicateContainment(String),
    #[error("missing object: {0} is neither placed nor in the gripper")]
    MissingObject(String),
    #[error("part required: {0} has parts but is held by none of them")]
    PartRequired(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("empty name")]
    EmptyName,
}

/// Every invariant violation of `state` against `env`; empty means valid.
pub fn validate_state(state: &WorldState, env: &Environment) -> Vec<StateViolation> {
    let mut out = Vec::new();
    if !env.has_location(&state.robot_at) {
        out.push(StateViolation::UnknownLocation(state.robot_at.clone()));
    }
    for (object, location) in &state.placements {
        if env.object(object).is_none() {
            out.push(StateViolation::UnknownObject(object.clone()));
        }
        if !env.has_location(location) {
            out.push(StateViolation::UnknownLocation(location.clone()));
        }
    }
    if let Some(grip) = &state.gripper {
        match env.object(&grip.object) {
            None => out.push(StateViolation::UnknownObject(grip.object.clone())),
            Some(obj) => match &grip.part {
                Some(part) if !obj.has_part(part) => out.push(StateViolation::UnknownPart {
                    object: obj.name.clone(),
                    part: part.clone(),
                }),
                None if !obj.parts.is_empty() => {
                    out.push(StateViolation::PartRequired(obj.name.clone()))
                }
                _ => {}
            },
        }
        if state.placements.contains_key(&grip.object) {
            out.push(StateViolation::DuplicateContainment(grip.object.clone()));
        }
    }
    for obj in &env.objects {
        if !state.placements.contains_key(&obj.name) && !state.holds(&obj.name) {
            out.push(StateViolation::MissingObject(obj.name.clone()));
        }
    }
    for name in state.fluents.keys().chain(state.fluent_history.iter()) {
        if !env.has_fluent(name) {
            out.push(StateViolation::UnknownFluent(name.clone()));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    ObjectAt { object: String, location: String },
    FluentTrue { fluent: String },
    GraspedByPart { object: String, part: String },
}

impl Condition {
    fn holds(&self, state: &WorldState) -> bool {
        match self {
            Condition::ObjectAt { object, location } => {
                state.location_of(object) == Some(location.as_str())
            }
            Condition::FluentTrue { fluent } => state.fluent(fluent),
            Condition::GraspedByPart { object, part } => state
                .gripper
                .as_ref()
                .is_some_and(|g| &g.object == object && g.part.as_deref() == Some(part.as_str())),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::ObjectAt { object, location } => write!(f, "{object} at {location}"),
            Condition::FluentTrue { fluent } => write!(f, "{fluent}"),
            Condition::GraspedByPart { object, part } => write!(f, "{object} grasped by {part}"),
        }
    }
}

/// Conjunction of conditions, optionally requiring some fluents to have
/// become true in a given order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoalSpec {
    pub conditions: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ordered_fluents: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GoalError {
    #[error("goal refers to unknown {kind} {name:?}")]
    Unresolved { kind: &'static str, name: String },
}

impl GoalSpec {
    pub fn object_at(object: impl Into<String>, location: impl Into<String>) -> Self {
        Self {
            conditions: vec![Condition::ObjectAt { object: object.into(), location: location.into() }],
            ordered_fluents: Vec::new(),
        }
    }

    /// All fluents true, first reached in exactly this order.
    pub fn sequence(fluents: &[&str]) -> Self {
        Self {
            conditions: fluents
                .iter()
                .map(|f| Condition::FluentTrue { fluent: f.to_string() })
                .collect(),
            ordered_fluents: fluents.iter().map(|f| f.to_string()).collect(),
        }
    }

    pub fn resolve(&self, env: &Environment) -> Result<(), GoalError> {
        let unresolved = |kind, name: &str| GoalError::Unresolved { kind, name: name.to_string() };
        for cond in &self.conditions {
            match cond {
                Condition::ObjectAt { object, location } => {
                    if env.object(object).is_none() {
                        return Err(unresolved("object", object));
                    }
                    if !env.has_location(location) {
                        return Err(unresolved("location", location));
                    }
                }
                Condition::FluentTrue { fluent } => {
                    if !env.has_fluent(fluent) {
                        return Err(unresolved("fluent", fluent));
                    }
                }
                Condition::GraspedByPart { object, part } => match env.object(object) {
                    None => return Err(unresolved("object", object)),
                    Some(o) if !o.has_part(part) => return Err(unresolved("part", part)),
                    Some(_) => {}
                },
            }
        }
        for fluent in &self.ordered_fluents {
            if !env.has_fluent(fluent) {
                return Err(unresolved("fluent", fluent));
            }
        }
        Ok(())
    }

    /// Pure check against an already-resolved goal.
    pub fn holds_in(&self, state: &WorldState) -> bool {
        if !self.conditions.iter().all(|c| c.holds(state)) {
            return false;
        }
        let mut last = None;
        for fluent in &self.ordered_fluents {
            match state.fluent_history.iter().position(|f| f == fluent) {
                Some(pos) if last.is_none_or(|prev| pos > prev) => last = Some(pos),
                _ => return false,
            }
        }
        true
    }
}

/// True iff every condition of `goal` holds in `state` (and sequenced fluents
/// were reached in order).
pub fn goal_satisfied(state: &WorldState, goal: &GoalSpec, env: &Environment) -> Result<bool, GoalError> {
    goal.resolve(env)?;
    Ok(goal.holds_in(state))
}

pub const SERVICE_LOCATIONS: [&str; 5] = ["Coffee table", "Kitchen table", "Desk", "Kitchen counter", "Table"];
pub const SERVICE_OBJECTS: [&str; 8] =
    ["Water Glass", "Pills", "Fork", "Mouse", "Knife", "Screwdriver", "Plate", "Cupcake"];

pub const WORKBENCH: &str = "workbench";
pub const OUTLET: &str = "outlet";
pub const BOARD: &str = "board";
pub const RACK: &str = "rack";
pub const CHARGER: &str = "charger";
pub const PROBE: &str = "probe";
pub const PROBE_CABLE: &str = "probe cable";

pub const BUTTON_BLUE_PRESSED: &str = "button_blue_pressed";
pub const BUTTON_RED_PRESSED: &str = "button_red_pressed";
pub const PROBE_CABLE_PLUGGED: &str = "probe_cable_plugged";
pub const TRAPDOOR_OPEN: &str = "trapdoor_open";
pub const CHARGER_PLUGGED: &str = "charger_plugged";
pub const PROBE_RACKED: &str = "probe_racked";

/// Home service setting: five pieces of furniture, eight part-less objects.
///
/// The catalog initial state puts object `i` on location `i mod 5` and the
/// robot at the first location; tasks override it (see `taskgen`).
pub fn build_service_env() -> Environment {
    let locations: Vec<Location> = SERVICE_LOCATIONS.iter().map(|l| Location::new(*l)).collect();
    let objects: Vec<ObjectItem> = SERVICE_OBJECTS.iter().map(|o| ObjectItem::new(*o)).collect();
    let placements = objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.name.clone(), locations[i % locations.len()].name.clone()))
        .collect();
    let initial = WorldState {
        robot_at: locations[0].name.clone(),
        gripper: None,
        placements,
        fluents: BTreeMap::new(),
        fluent_history: Vec::new(),
    };
    Environment { kind: EnvKind::Service, locations, objects, initial }
}

/// Stationary arm in front of a task board, with a charger to plug into an
/// outlet and a voltage probe to put in its rack.
pub fn build_taskboard_env() -> Environment {
    let locations = vec![
        Location::new(WORKBENCH),
        Location::new(OUTLET),
        Location::new(BOARD),
        Location::new(RACK),
    ];
    let objects = vec![
        ObjectItem::with_parts(CHARGER, &["plug", "cable"]),
        ObjectItem::with_parts(PROBE, &["handle", "body"]),
        ObjectItem::with_parts(PROBE_CABLE, &["plug", "cable"]),
    ];
    let placements = objects.iter().map(|o| (o.name.clone(), WORKBENCH.to_string())).collect();
    let fluents = [
        BUTTON_BLUE_PRESSED,
        BUTTON_RED_PRESSED,
        PROBE_CABLE_PLUGGED,
        TRAPDOOR_OPEN,
        CHARGER_PLUGGED,
        PROBE_RACKED,
    ]
    .iter()
    .map(|f| (f.to_string(), false))
    .collect();
    let initial = WorldState {
        robot_at: WORKBENCH.to_string(),
        gripper: None,
        placements,
        fluents,
        fluent_history: Vec::new(),
    };
    Environment { kind: EnvKind::Industrial, locations, objects, initial }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogs_are_valid() {
        let service = build_service_env();
        assert!(service.validate().is_empty());
        assert_eq!(service.locations.len(), 5);
        assert_eq!(service.objects.len(), 8);
        let board = build_taskboard_env();
        assert!(board.validate().is_empty());
        assert_eq!(board.initial.fluents.get(BUTTON_BLUE_PRESSED), Some(&false));
        let charger = board.object(CHARGER).unwrap();
        assert_eq!(charger.parts, ["plug", "cable"]);
        let colors: Vec<&str> = board.button_colors().collect();
        assert_eq!(colors, ["blue", "red"]);
    }

    #[test]
    fn duplicate_containment_is_reported() {
        let env = build_service_env();
        let mut state = env.initial.clone();
        state.gripper = Some(Grip { object: "Fork".into(), part: None });
        let violations = validate_state(&state, &env);
        assert_eq!(violations, [StateViolation::DuplicateContainment("Fork".into())]);
        assert!(violations[0].to_string().starts_with("duplicate containment"));
    }

    #[test]
    fn unknown_robot_location_is_reported() {
        let env = build_service_env();
        let mut state = env.initial.clone();
        state.robot_at = "Garage".into();
        let violations = validate_state(&state, &env);
        assert_eq!(violations, [StateViolation::UnknownLocation("Garage".into())]);
        assert!(violations[0].to_string().starts_with("unknown location"));
    }

    #[test]
    fn missing_and_unknown_parts() {
        let env = build_taskboard_env();
        let mut state = env.initial.clone();
        state.placements.remove(CHARGER);
        assert_eq!(validate_state(&state, &env), [StateViolation::MissingObject(CHARGER.into())]);
        state.gripper = Some(Grip { object: CHARGER.into(), part: Some("handle".into()) });
        assert_eq!(
            validate_state(&state, &env),
            [StateViolation::UnknownPart { object: CHARGER.into(), part: "handle".into() }]
        );
    }

    #[test]
    fn object_at_goal() {
        let env = build_service_env();
        let goal = GoalSpec::object_at("Water Glass", "Coffee table");
        let mut state = env.initial.clone();
        state.placements.insert("Water Glass".into(), "Kitchen table".into());
        assert!(!goal_satisfied(&state, &goal, &env).unwrap());
        state.placements.insert("Water Glass".into(), "Coffee table".into());
        assert!(goal_satisfied(&state, &goal, &env).unwrap());
        // pure: re-checking gives the same answer
        assert!(goal_satisfied(&state, &goal, &env).unwrap());
    }

    #[test]
    fn unresolved_goal_names_error() {
        let env = build_service_env();
        let goal = GoalSpec::object_at("Water Glass", "Garage");
        assert!(goal_satisfied(&env.initial, &goal, &env).is_err());
        let goal = GoalSpec::sequence(&["lights_on"]);
        assert!(goal_satisfied(&env.initial, &goal, &env).is_err());
    }

    #[test]
    fn sequenced_goal_requires_order() {
        let env = build_taskboard_env();
        let order = [BUTTON_BLUE_PRESSED, PROBE_CABLE_PLUGGED, BUTTON_RED_PRESSED, TRAPDOOR_OPEN];
        let goal = GoalSpec::sequence(&order);

        let mut state = env.initial.clone();
        for f in order {
            assert!(!goal_satisfied(&state, &goal, &env).unwrap());
            state.set_fluent(f, true);
        }
        assert!(goal_satisfied(&state, &goal, &env).unwrap());

        let mut swapped = env.initial.clone();
        for f in [BUTTON_RED_PRESSED, BUTTON_BLUE_PRESSED, PROBE_CABLE_PLUGGED, TRAPDOOR_OPEN] {
            swapped.set_fluent(f, true);
        }
        assert!(!goal_satisfied(&swapped, &goal, &env).unwrap());
    }

    #[test]
    fn fluent_history_records_first_time_only() {
        let env = build_taskboard_env();
        let mut state = env.initial.clone();
        state.set_fluent(TRAPDOOR_OPEN, true);
        state.set_fluent(TRAPDOOR_OPEN, false);
        state.set_fluent(TRAPDOOR_OPEN, true);
        assert_eq!(state.fluent_history, [TRAPDOOR_OPEN]);
    }

    #[test]
    fn gripper_description() {
        let env = build_taskboard_env();
        let mut state = env.initial.clone();
        assert_eq!(state.gripper_description(), "empty");
        state.placements.remove(CHARGER);
        state.gripper = Some(Grip { object: CHARGER.into(), part: Some("plug".into()) });
        assert_eq!(state.gripper_description(), "holding the charger by the plug");
    }
}
