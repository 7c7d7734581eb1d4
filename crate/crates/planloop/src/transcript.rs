//! JSON-lines episode transcripts.
//!
//! Each episode is a `header` line, one `interaction` line per executor
//! completion and a `footer` line. Files hold any number of episodes back to
//! back.

use std::io::{BufRead, Write};

use planloop_core::orchestrator::{EpisodeInfo, EpisodeMetrics, Interaction};
use planloop_core::world::EnvKind;
use planloop_core::{
    EpisodeTask, EpisodeTranscript, ExpectedOutcomes, GenerationRecord, Outcome, PipelineConfig, PrimitiveCall,
    WorldState,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Run-level facts shared by every episode of one corpus run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub backend: String,
    pub corpus_seed: u64,
    #[serde(default)]
    pub corpus_hash: Option<String>,
}

/// An episode together with everything needed to run it again.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub run: RunInfo,
    pub env: EnvKind,
    pub task: EpisodeTask,
    /// Ground-truth chain used by the oracle and the failure classifier.
    pub gtsg: Vec<PrimitiveCall>,
    pub config: PipelineConfig,
    pub transcript: EpisodeTranscript,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    run: RunInfo,
    env: EnvKind,
    task: EpisodeTask,
    gtsg: Vec<PrimitiveCall>,
    config: PipelineConfig,
    info: EpisodeInfo,
    plan: Vec<String>,
    eos: Option<ExpectedOutcomes>,
    notes: Vec<String>,
    setup: Vec<GenerationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Footer {
    outcome: Outcome,
    metrics: EpisodeMetrics,
    final_state: WorldState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(Box<Header>),
    Interaction(Box<Interaction>),
    Footer(Box<Footer>),
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
}

pub fn write_records<W: Write>(mut out: W, records: &[EpisodeRecord]) -> Result<(), TranscriptError> {
    for r in records {
        write_record(&mut out, r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_record<W: Write>(out: &mut W, r: &EpisodeRecord) -> Result<(), TranscriptError> {
    let t = &r.transcript;
    let header = Line::Header(Box::new(Header {
        run: r.run.clone(),
        env: r.env,
        task: r.task.clone(),
        gtsg: r.gtsg.clone(),
        config: r.config.clone(),
        info: t.info.clone(),
        plan: t.plan.clone(),
        eos: t.eos.clone(),
        notes: t.notes.clone(),
        setup: t.setup.clone(),
    }));
    emit(out, &header)?;
    for i in &t.interactions {
        emit(out, &Line::Interaction(Box::new(i.clone())))?;
    }
    let footer = Footer { outcome: t.outcome.clone(), metrics: t.metrics.clone(), final_state: t.final_state.clone() };
    emit(out, &Line::Footer(Box::new(footer)))
}

fn emit<W: Write>(out: &mut W, line: &Line) -> Result<(), TranscriptError> {
    serde_json::to_writer(&mut *out, line).map_err(|e| TranscriptError::Json { line: 0, source: e })?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<EpisodeRecord>, TranscriptError> {
    let mut records = Vec::new();
    let mut open: Option<(Header, Vec<Interaction>)> = None;
    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| TranscriptError::Json { line: lineno, source: e })?;
        let structure = |message: &str| TranscriptError::Structure { line: lineno, message: message.to_string() };
        match parsed {
            Line::Header(h) => {
                if open.is_some() {
                    return Err(structure("header before the previous episode's footer"));
                }
                open = Some((*h, Vec::new()));
            }
            Line::Interaction(i) => match open.as_mut() {
                Some((_, list)) => list.push(*i),
                None => return Err(structure("interaction outside an episode")),
            },
            Line::Footer(f) => {
                let (h, interactions) = open.take().ok_or_else(|| structure("footer without a header"))?;
                records.push(EpisodeRecord {
                    run: h.run,
                    env: h.env,
                    task: h.task,
                    gtsg: h.gtsg,
                    config: h.config,
                    transcript: EpisodeTranscript {
                        info: h.info,
                        plan: h.plan,
                        eos: h.eos,
                        notes: h.notes,
                        setup: h.setup,
                        interactions,
                        outcome: f.outcome,
                        metrics: f.metrics,
                        final_state: f.final_state,
                    },
                });
            }
        }
    }
    if open.is_some() {
        return Err(TranscriptError::Structure { line: 0, message: "file ends inside an episode".to_string() });
    }
    Ok(records)
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<EpisodeRecord>, TranscriptError> {
    read_records(std::io::BufReader::new(std::fs::File::open(path)?))
}
