//! Deterministic replay of recorded generations.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use planloop_core::{ChatBackend, ChatRequest, Completion, GatewayError, GenerationRecord, TokenCount};

/// Answers each prompt with the completion recorded for the same prompt
/// hash, first in first out.
pub struct ReplayBackend {
    queues: Mutex<HashMap<String, VecDeque<GenerationRecord>>>,
    known: HashMap<String, usize>,
}

impl ReplayBackend {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a GenerationRecord>) -> Self {
        let mut queues: HashMap<String, VecDeque<GenerationRecord>> = HashMap::new();
        for r in records {
            queues.entry(r.prompt_hash.clone()).or_default().push_back(r.clone());
        }
        let known = queues.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        Self { queues: Mutex::new(queues), known }
    }

    /// Records not yet replayed.
    pub fn remaining(&self) -> usize {
        self.queues.lock().expect("replay lock").values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let hash = &request.prompt_hash;
        if !self.known.contains_key(hash) {
            return Err(GatewayError::ReplayMismatch { prompt_hash: hash.clone() });
        }
        let mut queues = self.queues.lock().expect("replay lock");
        let record = queues
            .get_mut(hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| GatewayError::ReplayExhausted { prompt_hash: hash.clone() })?;
        Ok(Completion {
            text: record.completion,
            tokens: Some(TokenCount { count: record.tokens_out, method: record.token_method }),
            latency_secs: record.latency_secs,
        })
    }

    fn name(&self) -> String {
        "replay".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use planloop_core::{ChatSession, ModuleRole, ScriptedBackend, TokenMethod};

    #[test]
    fn replays_in_order_then_exhausts() {
        let live = ScriptedBackend::new(["one two", "three"]);
        let mut s = ChatSession::new(ModuleRole::Planner, &live);
        s.send("q").unwrap();
        let mut t = ChatSession::new(ModuleRole::Planner, &live);
        t.send("q").unwrap();
        let records: Vec<_> = s.records().iter().chain(t.records()).cloned().collect();

        let replay = ReplayBackend::new(&records);
        let mut a = ChatSession::new(ModuleRole::Planner, &replay);
        let (text, rec) = a.send("q").unwrap();
        assert_eq!(text, "one two");
        assert_eq!((rec.tokens_out, rec.token_method), (2, TokenMethod::Whitespace));
        let mut b = ChatSession::new(ModuleRole::Planner, &replay);
        assert_eq!(b.send("q").unwrap().0, "three");
        let mut c = ChatSession::new(ModuleRole::Planner, &replay);
        assert!(matches!(c.send("q"), Err(GatewayError::ReplayExhausted { .. })));
        assert!(matches!(c.send("other"), Err(GatewayError::ReplayMismatch { .. })));
        assert_eq!(replay.remaining(), 0);
    }
}
