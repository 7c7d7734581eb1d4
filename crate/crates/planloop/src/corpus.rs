//! Corpus files and the tasks the runner consumes.

use std::path::Path;

use planloop_core::primitives::{industrial_registry, service_registry, DEFAULT_GRASP_FAILURE};
use planloop_core::taskgen::{industrial_tasks, IndustrialTask};
use planloop_core::world::EnvKind;
use planloop_core::{
    build_service_env, build_taskboard_env, ground_truth_chain, Environment, GoalSpec, PrimitiveCall, Registry,
    TaskSpec, WorldState,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn environment(kind: EnvKind) -> Environment {
    match kind {
        EnvKind::Service => build_service_env(),
        EnvKind::Industrial => build_taskboard_env(),
    }
}

pub fn registry(kind: EnvKind) -> Registry {
    match kind {
        EnvKind::Service => service_registry(),
        EnvKind::Industrial => industrial_registry(),
    }
}

/// Grasp failure probability used when the run does not override it.
pub fn default_p_fail(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::Service => DEFAULT_GRASP_FAILURE,
        EnvKind::Industrial => 0.0,
    }
}

/// A task as the runner sees it: one instruction per repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTask {
    pub id: String,
    pub instructions: Vec<String>,
    pub goal: GoalSpec,
    pub initial: WorldState,
    pub gtsg: Vec<PrimitiveCall>,
}

impl BenchTask {
    pub fn instruction(&self, repetition: usize) -> &str {
        &self.instructions[repetition % self.instructions.len()]
    }
}

impl From<&TaskSpec> for BenchTask {
    fn from(spec: &TaskSpec) -> Self {
        Self {
            id: spec.id.clone(),
            instructions: spec.instructions.clone(),
            goal: spec.goal.clone(),
            initial: spec.initial.clone(),
            gtsg: ground_truth_chain(spec),
        }
    }
}

impl BenchTask {
    pub fn industrial(task: &IndustrialTask, env: &Environment) -> Self {
        Self {
            id: task.id.clone(),
            instructions: vec![task.instruction.clone()],
            goal: task.goal.clone(),
            initial: env.initial.clone(),
            gtsg: task.chain.clone(),
        }
    }
}

pub fn industrial_bench_tasks() -> Vec<BenchTask> {
    let env = build_taskboard_env();
    industrial_tasks().iter().map(|t| BenchTask::industrial(t, &env)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

pub fn read_corpus(path: &Path) -> Result<Vec<TaskSpec>, CorpusError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: p.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: p, source })
}

pub fn corpus_json(corpus: &[TaskSpec]) -> String {
    let mut s = serde_json::to_string_pretty(corpus).expect("corpus serializes");
    s.push('\n');
    s
}

/// Hex SHA-256 of the compact JSON encoding, independent of file layout.
pub fn corpus_hash(corpus: &[TaskSpec]) -> String {
    let bytes = serde_json::to_vec(corpus).expect("corpus serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
