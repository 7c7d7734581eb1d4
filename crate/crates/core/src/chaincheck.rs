//! Option chaining checks and failure classification.
//!
//! A chain of primitive calls is valid when every success outcome of call
//! `i` lies in the initialization set of call `i + 1`. [`verify_chain`]
//! checks this by enumerating the success outcomes reachable along the
//! chain. [`classify_failure`] labels a failed episode with the first
//! matching rule of a small taxonomy (unparseable code, a missing subgoal, a
//! mischaracterized subgoal, an unrecovered primitive failure).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{CallResult, EpisodeTranscript, Outcome, TwinResult};
use crate::parser::PrimitiveCall;
use crate::primitives::{check_precondition, success_outcomes, CallError, Registry, Violation};
use crate::world::{Environment, Grip, WorldState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainViolation {
    pub index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("call {index}: unknown primitive {name}")]
    UnknownPrimitive { index: usize, name: String },
    #[error("call {}: {}", .0.index, .0.message)]
    Violation(ChainViolation),
    #[error("state space has {size} states, above the limit of {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },
}

impl ChainError {
    pub fn violation(&self) -> Option<&ChainViolation> {
        match self {
            ChainError::Violation(v) => Some(v),
            _ => None,
        }
    }
}

fn propagate(
    registry: &Registry,
    env: &Environment,
    chain: &[PrimitiveCall],
    start: BTreeSet<WorldState>,
) -> Result<BTreeSet<WorldState>, ChainError> {
    let mut states = start;
    for (index, call) in chain.iter().enumerate() {
        let spec = registry
            .get(&call.name)
            .ok_or_else(|| ChainError::UnknownPrimitive { index, name: call.name.clone() })?;
        let mut next = BTreeSet::new();
        for s in &states {
            match success_outcomes(spec, s, env, &call.args) {
                Ok(outcomes) => next.extend(outcomes),
                Err(e) => return Err(ChainError::Violation(ChainViolation { index, message: e.to_string() })),
            }
        }
        states = next;
    }
    Ok(states)
}

/// Checks the chaining condition along `chain` from `initial`.
pub fn verify_chain(
    registry: &Registry,
    env: &Environment,
    chain: &[PrimitiveCall],
    initial: &WorldState,
) -> Result<(), ChainError> {
    propagate(registry, env, chain, BTreeSet::from([initial.clone()])).map(|_| ())
}

/// Like [`verify_chain`], but starting from every state of the environment
/// that affords the first call. Only practical for small catalogs.
pub fn verify_chain_full(
    registry: &Registry,
    env: &Environment,
    chain: &[PrimitiveCall],
    limit: u128,
) -> Result<(), ChainError> {
    let Some(first) = chain.first() else { return Ok(()) };
    let spec = registry
        .get(&first.name)
        .ok_or_else(|| ChainError::UnknownPrimitive { index: 0, name: first.name.clone() })?;
    let start: BTreeSet<WorldState> = enumerate_states(env, limit)?
        .into_iter()
        .filter(|s| check_precondition(spec, s, env, &first.args).is_ok())
        .collect();
    propagate(registry, env, chain, start).map(|_| ())
}

/// Every valid state of `env`. Fluent history lists the true fluents in
/// catalog order.
pub fn enumerate_states(env: &Environment, limit: u128) -> Result<Vec<WorldState>, ChainError> {
    let l = env.locations.len() as u128;
    let o = env.objects.len() as u32;
    let fluents: Vec<&String> = env.initial.fluents.keys().collect();
    let grips: Vec<Option<Grip>> = core::iter::once(None)
        .chain(env.objects.iter().flat_map(|obj| {
            let parts: Vec<Option<String>> =
                if obj.parts.is_empty() { vec![None] } else { obj.parts.iter().cloned().map(Some).collect() };
            parts.into_iter().map(move |part| Some(Grip { object: obj.name.clone(), part }))
        }))
        .collect();
    let placement_counts: u128 = grips
        .iter()
        .map(|g| l.saturating_pow(if g.is_some() { o.saturating_sub(1) } else { o }))
        .fold(0u128, u128::saturating_add);
    let size = l
        .saturating_mul(placement_counts)
        .saturating_mul(1u128.checked_shl(fluents.len() as u32).unwrap_or(u128::MAX));
    if size > limit {
        return Err(ChainError::StateSpaceTooLarge { size, limit });
    }

    let mut out = Vec::with_capacity(size as usize);
    for robot in &env.locations {
        for grip in &grips {
            let free: Vec<&str> = env
                .objects
                .iter()
                .filter(|obj| grip.as_ref().is_none_or(|g| g.object != obj.name))
                .map(|obj| obj.name.as_str())
                .collect();
            let combos = l.pow(free.len() as u32);
            for mut code in 0..combos {
                let mut placements = alloc::collections::BTreeMap::new();
                for name in &free {
                    let at = &env.locations[(code % l) as usize].name;
                    code /= l;
                    placements.insert(name.to_string(), at.clone());
                }
                for bits in 0..(1u64 << fluents.len()) {
                    let mut state = WorldState {
                        robot_at: robot.name.clone(),
                        gripper: grip.clone(),
                        placements: placements.clone(),
                        fluents: Default::default(),
                        fluent_history: Vec::new(),
                    };
                    for (k, f) in fluents.iter().enumerate() {
                        let on = bits & (1 << k) != 0;
                        state.fluents.insert((*f).clone(), on);
                        if on {
                            state.fluent_history.push((*f).clone());
                        }
                    }
                    out.push(state);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    MissingSubgoal,
    MischaracterizedSubgoal,
    PrimitiveFailureUnrecovered,
    CodeError,
    Other,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::MissingSubgoal => "MissingSubgoal",
            FailureKind::MischaracterizedSubgoal => "MischaracterizedSubgoal",
            FailureKind::PrimitiveFailureUnrecovered => "PrimitiveFailureUnrecovered",
            FailureKind::CodeError => "CodeError",
            FailureKind::Other => "Other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureLabel {
    pub kind: FailureKind,
    pub evidence: String,
}

impl FailureLabel {
    fn new(kind: FailureKind, evidence: String) -> Self {
        Self { kind, evidence }
    }
}

/// The primitive whose absence explains a precondition violation, given as
/// a name and an argument prefix.
fn fixing_call(error: &CallError) -> Option<(&'static str, Vec<&str>)> {
    let CallError::Precondition(v) = error else { return None };
    match v {
        Violation::NotColocated { location, .. } => Some(("move_to", vec![location.as_str()])),
        Violation::NotAtLocation { location } => Some(("move_to", vec![location.as_str()])),
        Violation::NotHolding { object } => Some(("grasp", vec![object.as_str()])),
        Violation::GripperOccupied { held } | Violation::GripperNotEmpty { held, .. } => {
            Some(("put_down", vec![held.as_str()]))
        }
        _ => None,
    }
}

fn matches_prefix(call: &PrimitiveCall, name: &str, args: &[&str]) -> bool {
    call.name == name && args.len() <= call.args.len() && args.iter().zip(&call.args).all(|(a, b)| *a == b)
}

struct Event<'a> {
    interaction: usize,
    error: Option<&'a CallError>,
    stochastic: Option<&'a PrimitiveCall>,
}

/// Labels a failed episode; `None` for a successful one.
pub fn classify_failure(transcript: &EpisodeTranscript, gtsg: &[PrimitiveCall]) -> Option<FailureLabel> {
    if transcript.outcome == Outcome::Success {
        return None;
    }
    let interactions = &transcript.interactions;
    if interactions.is_empty() {
        let reason = match &transcript.outcome {
            Outcome::Aborted { reason } => reason.clone(),
            _ => "no interaction".to_string(),
        };
        return Some(FailureLabel::new(FailureKind::Other, format!("no executor interaction: {reason}")));
    }

    // (a) mostly unparseable output
    let parse_errors = interactions.iter().filter(|i| i.program.is_err()).count();
    if parse_errors * 2 > interactions.len() {
        return Some(FailureLabel::new(
            FailureKind::CodeError,
            format!("{parse_errors} of {} interactions did not parse", interactions.len()),
        ));
    }

    // precondition violations and stochastic failures, in order
    let mut events: Vec<Event<'_>> = Vec::new();
    for (n, i) in interactions.iter().enumerate() {
        if let Some(TwinResult::Rejected(f)) = &i.twin {
            events.push(Event { interaction: n, error: Some(&f.error), stochastic: None });
        }
        for step in i.env.iter().flat_map(|e| &e.steps) {
            match &step.result {
                CallResult::Success => {}
                CallResult::Violation { error } => events.push(Event { interaction: n, error: Some(error), stochastic: None }),
                CallResult::StochasticFailure { .. } => {
                    events.push(Event { interaction: n, error: None, stochastic: Some(&step.call) })
                }
            }
        }
    }

    // (b) a violation, before any primitive failure, fixed by a ground-truth
    // primitive the snippet left out
    for ev in events.iter().take_while(|e| e.stochastic.is_none()) {
        let Some(error) = ev.error else { continue };
        let Some((name, args)) = fixing_call(error) else { continue };
        let in_gtsg = gtsg.iter().any(|c| matches_prefix(c, name, &args));
        let emitted = interactions[ev.interaction]
            .program
            .as_ref()
            .is_ok_and(|p| p.calls.iter().any(|c| matches_prefix(c, name, &args)));
        if in_gtsg && !emitted {
            return Some(FailureLabel::new(
                FailureKind::MissingSubgoal,
                format!("interaction {}: {error}; no {name}({}) in the snippet", ev.interaction, args.join(", ")),
            ));
        }
    }

    // (c) no primitive failure, no violation other than downstream of a
    // wrong-part one, and a call whose parameters differ from its
    // ground-truth counterpart
    let part_first = events.iter().all(|e| e.stochastic.is_none())
        && events
            .first()
            .map_or(true, |e| matches!(e.error, Some(CallError::Precondition(Violation::WrongPart { .. }))));
    if part_first {
        for (n, i) in interactions.iter().enumerate() {
            for step in i.env.iter().flat_map(|e| &e.steps) {
                let call = &step.call;
                let counterpart = gtsg
                    .iter()
                    .find(|g| g.name == call.name && g.args.first() == call.args.first() && g.args != call.args);
                if let Some(g) = counterpart {
                    return Some(FailureLabel::new(
                        FailureKind::MischaracterizedSubgoal,
                        format!("interaction {n}: executed {call} where the ground truth is {g}"),
                    ));
                }
            }
        }
    }

    // (d) a primitive failure never retried
    for ev in &events {
        let Some(failed) = ev.stochastic else { continue };
        let retried = interactions[ev.interaction + 1..].iter().any(|i| {
            i.env.iter().flat_map(|e| &e.steps).any(|s| s.call.name == failed.name)
        });
        if !retried {
            return Some(FailureLabel::new(
                FailureKind::PrimitiveFailureUnrecovered,
                format!("interaction {}: {failed} failed and was not retried", ev.interaction),
            ));
        }
    }

    let evidence = match &transcript.outcome {
        Outcome::Aborted { reason } => format!("aborted: {reason}"),
        _ => format!("goal unmet after {} interactions", interactions.len()),
    };
    Some(FailureLabel::new(FailureKind::Other, evidence))
}
