//! Symbolic robot task execution driven by a chat model.
//!
//! The crate models motion primitives as options over a small symbolic world
//! (precondition, success outcomes, stochastic failure), parses the three text
//! formats a chat model returns (plan tuple, expected-outcome dictionary,
//! tagged code snippet) and runs the plan / expected-outcomes / execute /
//! feedback loop against a digital twin and a seeded environment.
//!
//! Everything here is `no_std` + `alloc`: file formats, HTTP and the command
//! line live in the `planloop` companion crate.

#![no_std]

extern crate alloc;

pub mod chaincheck;
pub mod gateway;
pub mod oracle;
pub mod orchestrator;
pub mod parser;
pub mod primitives;
pub mod prompts;
pub mod taskgen;
pub mod world;

mod pyrepr;
mod seed;

pub use chaincheck::{classify_failure, verify_chain, ChainError, ChainViolation, FailureKind, FailureLabel};
pub use gateway::{
    Backends, ChatBackend, ChatRequest, ChatSession, Completion, GatewayError, GenerationRecord,
    Message, ModuleRole, Role, ScriptedBackend, TokenCount, TokenMethod,
};
pub use oracle::{Fault, OracleBackend, OracleConfig, OracleTask};
pub use orchestrator::{
    compose_feedback, run_cap_episode, run_episode, Clock, EpisodeTask, EpisodeTranscript,
    Feedback, FeedbackStatus, Outcome, PipelineConfig, Variant,
};
pub use parser::{
    extract_code, parse_eo_map, parse_plan, parse_snippet, ExpectedOutcomes, ParseError,
    PrimitiveCall, SnippetProgram,
};
pub use primitives::{
    check_precondition, execute, skill_headers, CallError, ExecOutcome, PrimitiveSpec, Registry,
    Violation,
};
pub use seed::derive_seed;
pub use taskgen::{generate_corpus, ground_truth_chain, render_instruction, TaskSpec};
pub use world::{
    build_service_env, build_taskboard_env, goal_satisfied, validate_state, Condition,
    Environment, GoalSpec, WorldState,
};
