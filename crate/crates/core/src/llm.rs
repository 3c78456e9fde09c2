//! Chat-completion clients and helpers for reading list-shaped model output.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Result, ToolshedError};
use crate::prompts::Prompt;

pub const ENV_LLM_ENDPOINT: &str = "TOOLSHED_LLM_ENDPOINT";
pub const ENV_LLM_KEY: &str = "TOOLSHED_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "TOOLSHED_LLM_MODEL";

/// Anything that can turn a prompt into text.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String>;

    /// Stable description used in run manifests.
    fn identity(&self) -> String;
}

/// OpenAI-compatible `chat/completions` client.
pub struct HttpLlmClient {
    endpoint: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        HttpLlmClient {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }

    /// `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_LLM_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(ENV_LLM_KEY).ok().filter(|s| !s.is_empty());
        let model = std::env::var(ENV_LLM_MODEL).unwrap_or_else(|_| "gpt-4o".to_owned());
        Some(Self::new(endpoint, key, model))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let mut messages = Vec::new();
        if !prompt.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": prompt.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": prompt.user}));
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let response = post_json(&self.agent, &self.endpoint, self.key.as_deref(), &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| provider_error("chat response has no choices[0].message.content", None))
    }

    fn identity(&self) -> String {
        format!("http:{}#{}", self.endpoint, self.model)
    }
}

pub(crate) fn provider_error(message: impl Into<String>, status: Option<u16>) -> ToolshedError {
    ToolshedError::Provider {
        message: message.into(),
        status,
        retryable: status.is_some_and(|s| s == 429 || s >= 500),
        retry_after_secs: None,
    }
}

/// POST a JSON body and decode a JSON response, mapping failures onto
/// provider errors with retry metadata.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    key: Option<&str>,
    body: &Value,
) -> Result<Value> {
    let mut request = agent.post(url).set("Content-Type", "application/json");
    if let Some(key) = key {
        request = request.set("Authorization", &format!("Bearer {key}"));
    }
    match request.send_json(body) {
        Ok(resp) => resp
            .into_json::<Value>()
            .map_err(|e| provider_error(format!("undecodable response from {url}: {e}"), None)),
        Err(ureq::Error::Status(code, resp)) => {
            let retry_after_secs = resp.header("Retry-After").and_then(|v| v.trim().parse().ok());
            let detail = resp.into_string().unwrap_or_default();
            Err(ToolshedError::Provider {
                message: format!("{url} answered {code}: {}", detail.trim()),
                status: Some(code),
                retryable: code == 429 || code >= 500,
                retry_after_secs,
            })
        }
        Err(ureq::Error::Transport(t)) => Err(ToolshedError::Provider {
            message: format!("transport failure talking to {url}: {t}"),
            status: None,
            retryable: true,
            retry_after_secs: None,
        }),
    }
}

/// Replays canned responses in order and records every prompt it receives.
/// Useful for offline tests of the LLM code paths.
#[derive(Default)]
pub struct ScriptedLlm {
    responses: Mutex<VecDeque<Result<String>>>,
    prompts: Mutex<Vec<Prompt>>,
}

impl ScriptedLlm {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedLlm {
            responses: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn push_error(&self, err: ToolshedError) {
        self.responses.lock().unwrap().push_back(Err(err));
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        self.prompts.lock().unwrap().clone()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        self.prompts.lock().unwrap().push(prompt.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(provider_error("scripted client ran out of responses", None)))
    }

    fn identity(&self) -> String {
        "scripted".to_owned()
    }
}

/// Pull an ordered list of strings out of model output.
///
/// Accepts, in order of preference: a JSON array of strings anywhere in the
/// text, a Python-style list literal, or numbered / bulleted lines. Returns
/// `None` when nothing list-shaped is found.
pub fn parse_string_list(text: &str) -> Option<Vec<String>> {
    if let Some(items) = json_array(text) {
        return Some(items);
    }
    if let Some(items) = python_list(text) {
        return Some(items);
    }
    let items: Vec<String> = text
        .lines()
        .filter_map(strip_list_marker)
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect();
    (!items.is_empty()).then_some(items)
}

fn json_array(text: &str) -> Option<Vec<String>> {
    // try the last bracketed span first: structured answers usually come at the end
    let mut end_search = text.len();
    while let Some(close) = text[..end_search].rfind(']') {
        let mut start_search = close;
        while let Some(open) = text[..start_search].rfind('[') {
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&text[open..=close]) {
                let strings: Option<Vec<String>> =
                    items.iter().map(|v| v.as_str().map(|s| s.trim().to_owned())).collect();
                if let Some(strings) = strings {
                    let strings: Vec<String> = strings.into_iter().filter(|s| !s.is_empty()).collect();
                    if !strings.is_empty() {
                        return Some(strings);
                    }
                }
            }
            start_search = open;
        }
        end_search = close;
    }
    None
}

fn python_list(text: &str) -> Option<Vec<String>> {
    let open = text.rfind("['")?;
    let close = open + text[open..].find("']")?;
    let inner = &text[open + 2..close];
    let items: Vec<String> = inner
        .split("', '")
        .flat_map(|s| s.split("','"))
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect();
    (!items.is_empty()).then_some(items)
}

fn strip_list_marker(line: &str) -> Option<&str> {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
        return Some(rest);
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(rest);
        }
    }
    None
}

fn clean_item(s: &str) -> String {
    s.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`' | ',')).trim().to_owned()
}
