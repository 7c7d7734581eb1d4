//! Chat-completions client for OpenAI-compatible servers.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use planloop_core::gateway::Role;
use planloop_core::{ChatBackend, ChatRequest, Completion, GatewayError, TokenCount, TokenMethod};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const ENV_BASE_URL: &str = "PLANLOOP_BASE_URL";
pub const ENV_MODEL: &str = "PLANLOOP_MODEL";
pub const ENV_API_KEY: &str = "PLANLOOP_API_KEY";
pub const ENV_TIMEOUT: &str = "PLANLOOP_TIMEOUT_SECS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub path: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_concurrency: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: None,
            model: None,
            path: "/v1/chat/completions".to_string(),
            api_key_env: ENV_API_KEY.to_string(),
            temperature: 0.0,
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
            max_concurrency: 4,
        }
    }
}

impl HttpSettings {
    /// Fills unset fields from `PLANLOOP_*` environment variables.
    pub fn with_env(mut self) -> Self {
        if self.base_url.is_none() {
            self.base_url = std::env::var(ENV_BASE_URL).ok();
        }
        if self.model.is_none() {
            self.model = std::env::var(ENV_MODEL).ok();
        }
        if let Some(t) = std::env::var(ENV_TIMEOUT).ok().and_then(|v| v.parse().ok()) {
            self.timeout_secs = t;
        }
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpConfigError {
    #[error("no base URL: set `base_url` in the config file or {ENV_BASE_URL}")]
    MissingBaseUrl,
    #[error("no model name: set `model` in the config file or {ENV_MODEL}")]
    MissingModel,
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    settings: HttpSettings,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, HttpConfigError> {
        let base = settings.base_url.clone().ok_or(HttpConfigError::MissingBaseUrl)?;
        let model = settings.model.clone().ok_or(HttpConfigError::MissingModel)?;
        let url = format!("{}{}", base.trim_end_matches('/'), settings.path);
        let api_key = std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(settings.timeout_secs)).build();
        let slots = Slots { free: Mutex::new(settings.max_concurrency.max(1)), cv: Condvar::new() };
        Ok(Self { url, model, api_key, settings, agent, slots })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        json!({ "model": self.model, "messages": messages, "temperature": self.settings.temperature })
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body.clone()) {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| (true, format!("bad response body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let retry = code == 429 || code >= 500;
                let text = resp.into_string().unwrap_or_default();
                Err((retry, format!("HTTP {code}: {}", text.chars().take(300).collect::<String>())))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }
}

/// Extracts the completion text and reported output tokens.
pub fn parse_response(v: &Value) -> Result<(String, Option<u64>), String> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())?;
    let tokens = v.pointer("/usage/completion_tokens").and_then(Value::as_u64);
    Ok((text.to_string(), tokens))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let body = self.body(request);
        let _slot = self.slots.acquire();
        let attempts = self.settings.retries + 1;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                std::thread::sleep(Duration::from_millis(self.settings.backoff_ms << (n - 1).min(6)));
            }
            let started = Instant::now();
            match self.attempt(&body) {
                Ok(v) => {
                    let (text, tokens) = parse_response(&v).map_err(|message| GatewayError::Backend { message })?;
                    return Ok(Completion {
                        text,
                        tokens: tokens.map(|count| TokenCount { count, method: TokenMethod::Reported }),
                        latency_secs: started.elapsed().as_secs_f64(),
                    });
                }
                Err((retry, message)) => {
                    last = message;
                    if !retry {
                        return Err(GatewayError::Transport { attempts: n + 1, message: last });
                    }
                }
            }
        }
        Err(GatewayError::Transport { attempts, message: last })
    }

    fn name(&self) -> String {
        format!("http:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use planloop_core::{Message, ModuleRole};

    #[test]
    fn reads_text_and_usage() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}], "usage": {"completion_tokens": 7}});
        assert_eq!(parse_response(&v).unwrap(), ("hi".to_string(), Some(7)));
        let v = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(parse_response(&v).unwrap(), ("hi".to_string(), None));
        assert!(parse_response(&json!({})).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let settings = HttpSettings {
            base_url: Some("http://127.0.0.1:9".to_string()),
            model: Some("m".to_string()),
            retries: 2,
            backoff_ms: 1,
            timeout_secs: 2,
            ..HttpSettings::default()
        };
        let backend = HttpBackend::new(settings).unwrap();
        let req = ChatRequest::new(ModuleRole::Planner, vec![Message::user("hello")]);
        match backend.complete(&req) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_settings_are_reported() {
        assert!(matches!(HttpBackend::new(HttpSettings::default()), Err(HttpConfigError::MissingBaseUrl)));
    }
}
