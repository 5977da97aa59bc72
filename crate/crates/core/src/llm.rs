//! Minimal client for OpenAI-compatible chat-completion endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::token_estimate;
use crate::error::{Error, Result};

pub const ENV_BASE_URL: &str = "VULNAUDIT_LLM_BASE_URL";
pub const ENV_MODEL: &str = "VULNAUDIT_LLM_MODEL";
pub const ENV_API_KEY: &str = "VULNAUDIT_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub content: String,
    /// Prompt plus completion tokens as reported by the endpoint, or an
    /// estimate when the endpoint omits usage.
    pub tokens_used: u64,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatReply>;
}

#[derive(Debug, Clone)]
pub struct HttpChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(HttpChatClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            max_retries,
            client,
        })
    }

    /// Reads the endpoint from `VULNAUDIT_LLM_BASE_URL`, `VULNAUDIT_LLM_MODEL`
    /// and the optional `VULNAUDIT_LLM_API_KEY`.
    pub fn from_env(timeout: Duration, max_retries: u32) -> Result<Self> {
        let base = std::env::var(ENV_BASE_URL)
            .map_err(|_| Error::Backend(format!("{ENV_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        HttpChatClient::new(base, model, key, timeout, max_retries)
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<ChatReply> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Backend(format!("endpoint returned {status}")));
        }
        let value: Value = resp.json().map_err(|e| Error::Backend(e.to_string()))?;
        parse_completion(&value, messages)
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatReply> {
        let mut last = None;
        for _ in 0..=self.max_retries {
            match self.attempt(messages) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("chat request failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Backend("no attempt made".into())))
    }
}

fn parse_completion(value: &Value, messages: &[ChatMessage]) -> Result<ChatReply> {
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Backend("reply has no choices[0].message.content".into()))?
        .to_string();
    let tokens_used = match value.pointer("/usage/total_tokens").and_then(Value::as_u64) {
        Some(t) => t,
        None => {
            let prompt: u64 = messages.iter().map(|m| token_estimate(&m.content)).sum();
            prompt + token_estimate(&content)
        }
    };
    Ok(ChatReply {
        content,
        tokens_used,
    })
}

/// Pulls the first JSON object out of a model reply, tolerating code fences
/// and surrounding prose.
pub fn extract_json(text: &str) -> Result<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let start = trimmed
        .find('{')
        .ok_or_else(|| Error::InvalidInput("reply contains no JSON object".into()))?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in trimmed[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(serde_json::from_str(&trimmed[start..start + i + 1])?);
                }
            }
            _ => {}
        }
    }
    Err(Error::InvalidInput("unterminated JSON object in reply".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_fenced_json() {
        let v = extract_json("Sure:\n```json\n{\"a\": \"}\", \"b\": {\"c\": 1}}\n```").unwrap();
        assert_eq!(v["b"]["c"], 1);
        assert_eq!(v["a"], "}");
    }

    #[test]
    fn no_json_is_error() {
        assert!(extract_json("nothing here").is_err());
    }

    #[test]
    fn usage_falls_back_to_estimate() {
        let v = serde_json::json!({"choices": [{"message": {"content": "abcd"}}]});
        let r = parse_completion(&v, &[ChatMessage::user("12345678")]).unwrap();
        assert_eq!(r.tokens_used, 3);
        let v = serde_json::json!({"choices": [{"message": {"content": "x"}}], "usage": {"total_tokens": 42}});
        assert_eq!(parse_completion(&v, &[]).unwrap().tokens_used, 42);
    }
}
