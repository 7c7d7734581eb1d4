//! Failure labels for recorded episodes, written as CSV.

use std::collections::HashMap;
use std::io::Write;

use planloop_core::{classify_failure, PrimitiveCall};
use serde::Serialize;

use crate::transcript::EpisodeRecord;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelRow {
    pub task_id: String,
    pub architecture: String,
    pub repetition: usize,
    pub label: String,
    pub evidence: String,
}

/// One row per failed episode. `gtsg` overrides the chain recorded in the
/// transcript, keyed by task id.
pub fn label_records(records: &[EpisodeRecord], gtsg: &HashMap<String, Vec<PrimitiveCall>>) -> Vec<LabelRow> {
    records
        .iter()
        .filter_map(|r| {
            let chain = gtsg.get(&r.task.id).unwrap_or(&r.gtsg);
            let label = classify_failure(&r.transcript, chain)?;
            Some(LabelRow {
                task_id: r.task.id.clone(),
                architecture: r.config.label.clone(),
                repetition: r.task.repetition,
                label: label.kind.as_str().to_string(),
                evidence: label.evidence,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, rows: &[LabelRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["task_id", "architecture", "repetition", "label", "evidence"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
