//! Chat-completion clients.
//!
//! [`ChatClient`] is the seam between the pipeline and a model. Two
//! implementations ship here: [`OpenAiCompatClient`] for any server speaking
//! the `/v1/chat/completions` wire format, and [`ScriptedClient`], which replays
//! canned responses keyed by task and sample index for tests and dry runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// Identifies a request within a run. Never sent over the wire; used for
/// logging and by [`ScriptedClient`] to pick a response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestTag {
    pub task_id: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: Option<u64>,
    pub tag: RequestTag,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no scripted response for {task_id}#{index}")]
    Exhausted { task_id: String, index: usize },
    #[error("client does not support {0}")]
    Unsupported(&'static str),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;

    /// Scalar reward for the final assistant turn of `request`.
    fn score(&self, _request: &ChatRequest) -> Result<f64, ClientError> {
        Err(ClientError::Unsupported("reward scoring"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 500 }
    }
}

/// Calls `f` until it succeeds, fails with a non-retryable error, or the retry
/// budget runs out. Returns the final result and the number of attempts made.
pub fn with_retry<T>(policy: RetryPolicy, mut f: impl FnMut() -> Result<T, ClientError>) -> (Result<T, ClientError>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f() {
            Err(e) if e.is_retryable() && attempt <= policy.max_retries => {
                let delay = policy.base_delay_ms.saturating_mul(1 << (attempt - 1).min(10));
                tracing::warn!(attempt, error = %e, "retrying client call");
                thread::sleep(Duration::from_millis(delay));
            }
            other => return (other, attempt),
        }
    }
}

/// Spaces calls at least `interval` apart across threads.
#[derive(Debug)]
pub struct Throttle {
    interval: Duration,
    next: Mutex<Instant>,
}

impl Throttle {
    pub fn per_second(rate: f64) -> Option<Self> {
        (rate > 0.0 && rate.is_finite()).then(|| Throttle {
            interval: Duration::from_secs_f64(1.0 / rate),
            next: Mutex::new(Instant::now()),
        })
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("throttle lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Connection settings for [`OpenAiCompatClient`]. The API key is only ever
/// read from the environment variable named in `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub requests_per_second: Option<f64>,
    pub timeout_s: u64,
    pub max_tokens: Option<u32>,
    /// For multi-attribute reward models, the attribute used as the score
    /// (e.g. `correctness`).
    pub reward_attribute: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: String::new(),
            api_key_env: "RANKBENCH_API_KEY".into(),
            requests_per_second: None,
            timeout_s: 600,
            max_tokens: None,
            reward_attribute: None,
        }
    }
}

pub struct OpenAiCompatClient {
    cfg: ClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    throttle: Option<Throttle>,
}

impl OpenAiCompatClient {
    /// Builds a client; fails if the configured key variable is unset.
    pub fn from_env(cfg: ClientConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| ClientError::MissingKey(cfg.api_key_env.clone()))?;
        Ok(Self::with_key(cfg, Some(api_key)))
    }

    pub fn with_key(cfg: ClientConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let throttle = cfg.requests_per_second.and_then(Throttle::per_second);
        OpenAiCompatClient { cfg, api_key, agent, throttle }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if let Some(max_tokens) = self.cfg.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn post(&self, body: &Value) -> Result<Value, ClientError> {
        if let Some(t) = &self.throttle {
            t.acquire();
        }
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))
    }
}

fn first_message_content(resp: &Value) -> Result<&str, ClientError> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))
}

/// Parses a reward reply: either a bare number, or `name:value` pairs
/// separated by commas from which `attribute` is picked.
pub fn parse_reward(content: &str, attribute: Option<&str>) -> Result<f64, ClientError> {
    let content = content.trim();
    match attribute {
        None => content
            .parse::<f64>()
            .map_err(|_| ClientError::Malformed(format!("reward `{content}` is not a number"))),
        Some(attr) => content
            .split(',')
            .filter_map(|pair| pair.split_once(':'))
            .find(|(name, _)| name.trim() == attr)
            .and_then(|(_, v)| v.trim().parse::<f64>().ok())
            .ok_or_else(|| ClientError::Malformed(format!("reward attribute `{attr}` not in `{content}`"))),
    }
}

impl ChatClient for OpenAiCompatClient {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let resp = self.post(&self.body(request))?;
        first_message_content(&resp).map(str::to_string)
    }

    fn score(&self, request: &ChatRequest) -> Result<f64, ClientError> {
        let resp = self.post(&self.body(request))?;
        // Reward endpoints differ: some return a number in the message
        // content, some a `reward` field next to it.
        if let Some(r) = resp.pointer("/choices/0/message/reward").and_then(Value::as_f64) {
            return Ok(r);
        }
        parse_reward(first_message_content(&resp)?, self.cfg.reward_attribute.as_deref())
    }
}

/// Replays canned responses.
///
/// Completions for request `(task_id, index)` come from `completions[task_id][index]`,
/// rewards from `rewards[task_id][index]`; the key `"*"` serves any task without
/// its own list. Running past the end of a list yields [`ClientError::Exhausted`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedClient {
    pub name: String,
    pub completions: BTreeMap<String, Vec<String>>,
    pub rewards: BTreeMap<String, Vec<f64>>,
}

impl ScriptedClient {
    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Transport(format!("{}: {e}", path.display())))?;
        let mut client: ScriptedClient = serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
        if client.name.is_empty() {
            client.name = "scripted".into();
        }
        Ok(client)
    }

    fn lookup<'a, T>(map: &'a BTreeMap<String, Vec<T>>, tag: &RequestTag) -> Result<&'a T, ClientError> {
        map.get(&tag.task_id)
            .or_else(|| map.get("*"))
            .and_then(|v| v.get(tag.index))
            .ok_or_else(|| ClientError::Exhausted { task_id: tag.task_id.clone(), index: tag.index })
    }
}

impl ChatClient for ScriptedClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        Self::lookup(&self.completions, &request.tag).cloned()
    }

    fn score(&self, request: &ChatRequest) -> Result<f64, ClientError> {
        Self::lookup(&self.rewards, &request.tag).copied()
    }
}
