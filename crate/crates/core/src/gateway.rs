//! Chat interface shared by every pipeline module.
//!
//! A [`ChatBackend`] answers one request (the whole message list). A
//! [`ChatSession`] owns the append-only conversation of one module and keeps
//! a [`GenerationRecord`] per completion. Transport-specific backends (HTTP,
//! replay, recording) live in the std companion crate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Which pipeline module a conversation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleRole {
    Planner,
    ExpectedOutcomes,
    Executor,
    CodeAsPolicies,
    Paraphrase,
}

impl ModuleRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleRole::Planner => "planner",
            ModuleRole::ExpectedOutcomes => "expected_outcomes",
            ModuleRole::Executor => "executor",
            ModuleRole::CodeAsPolicies => "code_as_policies",
            ModuleRole::Paraphrase => "paraphrase",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChatRequest {
    pub module: ModuleRole,
    pub messages: Vec<Message>,
    /// Lowercase hex SHA-256 of the module name and the message list.
    pub prompt_hash: String,
}

impl ChatRequest {
    pub fn new(module: ModuleRole, messages: Vec<Message>) -> Self {
        let prompt_hash = prompt_hash(module, &messages);
        Self { module, messages, prompt_hash }
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

/// Hash of everything the model sees. Lengths are mixed in so message
/// boundaries cannot be forged by concatenation.
pub fn prompt_hash(module: ModuleRole, messages: &[Message]) -> String {
    let mut h = Sha256::new();
    h.update(module.as_str().as_bytes());
    for m in messages {
        let role: &[u8] = match m.role {
            Role::System => b"system",
            Role::User => b"user",
            Role::Assistant => b"assistant",
        };
        h.update([0u8]);
        h.update(role);
        h.update((m.content.len() as u64).to_le_bytes());
        h.update(m.content.as_bytes());
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMethod {
    /// Usage reported by the serving backend.
    Reported,
    /// Whitespace-separated words of the completion.
    Whitespace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub count: u64,
    pub method: TokenMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Option<TokenCount>,
    pub latency_secs: f64,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens: None, latency_secs: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub module: ModuleRole,
    pub prompt_hash: String,
    pub prompt_chars: u64,
    pub completion: String,
    pub tokens_out: u64,
    pub token_method: TokenMethod,
    pub latency_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay exhausted for prompt {prompt_hash}")]
    ReplayExhausted { prompt_hash: String },
    #[error("prompt {prompt_hash} does not match any recorded prompt")]
    ReplayMismatch { prompt_hash: String },
    #[error("backend error: {message}")]
    Backend { message: String },
}

pub trait ChatBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;

    /// Short label recorded in reports.
    fn name(&self) -> String {
        "custom".to_string()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for alloc::boxed::Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Backend bindings for the three pipeline modules.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub planner: &'a dyn ChatBackend,
    pub eo: &'a dyn ChatBackend,
    pub executor: &'a dyn ChatBackend,
}

impl<'a> Backends<'a> {
    pub fn uniform(backend: &'a dyn ChatBackend) -> Self {
        Self { planner: backend, eo: backend, executor: backend }
    }
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One module's conversation. Context only grows; a failed request leaves it
/// as it was before the call.
pub struct ChatSession<'a> {
    module: ModuleRole,
    backend: &'a dyn ChatBackend,
    messages: Vec<Message>,
    records: Vec<GenerationRecord>,
}

impl<'a> ChatSession<'a> {
    pub fn new(module: ModuleRole, backend: &'a dyn ChatBackend) -> Self {
        Self { module, backend, messages: Vec::new(), records: Vec::new() }
    }

    pub fn module(&self) -> ModuleRole {
        self.module
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    pub fn send(&mut self, user_message: impl Into<String>) -> Result<(String, GenerationRecord), GatewayError> {
        self.messages.push(Message::user(user_message));
        let request = ChatRequest::new(self.module, self.messages.clone());
        let completion = match self.backend.complete(&request) {
            Ok(c) => c,
            Err(e) => {
                self.messages.pop();
                return Err(e);
            }
        };
        let tokens = completion.tokens.unwrap_or(TokenCount {
            count: whitespace_tokens(&completion.text),
            method: TokenMethod::Whitespace,
        });
        let record = GenerationRecord {
            module: self.module,
            prompt_hash: request.prompt_hash,
            prompt_chars: self.messages.iter().map(|m| m.content.chars().count() as u64).sum(),
            completion: completion.text.clone(),
            tokens_out: tokens.count,
            token_method: tokens.method,
            latency_secs: completion.latency_secs,
        };
        self.messages.push(Message::assistant(completion.text.clone()));
        self.records.push(record.clone());
        Ok((completion.text, record))
    }
}

/// Returns canned completions in order, then keeps repeating the last one.
pub struct ScriptedBackend {
    replies: Vec<String>,
    next: Cell<usize>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self { replies: replies.into_iter().map(Into::into).collect(), next: Cell::new(0) }
    }

    /// How many requests have been answered.
    pub fn calls(&self) -> usize {
        self.next.get()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _request: &ChatRequest) -> Result<Completion, GatewayError> {
        let i = self.next.get();
        self.next.set(i + 1);
        let text = self
            .replies
            .get(i)
            .or(self.replies.last())
            .ok_or_else(|| GatewayError::Backend { message: "no scripted replies".to_string() })?;
        Ok(Completion::text(text.clone()))
    }

    fn name(&self) -> String {
        format!("scripted({})", self.replies.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Failing;

    impl ChatBackend for Failing {
        fn complete(&self, _: &ChatRequest) -> Result<Completion, GatewayError> {
            Err(GatewayError::Transport { attempts: 3, message: "refused".into() })
        }
    }

    #[test]
    fn session_accumulates_context() {
        let backend = ScriptedBackend::new(["one two", "three"]);
        let mut session = ChatSession::new(ModuleRole::Executor, &backend);
        let (text, record) = session.send("first").unwrap();
        assert_eq!(text, "one two");
        assert_eq!(record.tokens_out, 2);
        assert_eq!(record.token_method, TokenMethod::Whitespace);
        session.send("second").unwrap();
        let roles: Vec<Role> = session.messages().iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant, Role::User, Role::Assistant]);
        assert_eq!(session.records().len(), 2);
        // scripted backend repeats its last reply
        assert_eq!(session.send("third").unwrap().0, "three");
    }

    #[test]
    fn failed_send_leaves_context_untouched() {
        let mut session = ChatSession::new(ModuleRole::Planner, &Failing);
        let err = session.send("hello").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert!(session.messages().is_empty());
    }

    #[test]
    fn hash_depends_on_module_and_boundaries() {
        let a = prompt_hash(ModuleRole::Planner, &[Message::user("ab")]);
        assert_eq!(a.len(), 64);
        assert_eq!(a, prompt_hash(ModuleRole::Planner, &[Message::user("ab")]));
        assert_ne!(a, prompt_hash(ModuleRole::Executor, &[Message::user("ab")]));
        assert_ne!(
            prompt_hash(ModuleRole::Planner, &[Message::user("a"), Message::user("b")]),
            prompt_hash(ModuleRole::Planner, &[Message::user("ab")])
        );
        let req = ChatRequest::new(ModuleRole::Planner, vec![Message::user("x"), Message::assistant("y")]);
        assert_eq!(req.last_user(), "x");
    }
}
