//! HTTP transport: one completion request with retry and backoff.

use std::thread;
use std::time::Duration;

use serde_json::json;

use super::{EndpointConfig, ExtractError, PromptMode, MAX_TOKENS_SLACK};

/// What goes over the wire for one completion.
#[derive(Debug, Clone)]
pub enum Prompt {
    Raw(String),
    Chat { system: String, user: String },
}

impl Prompt {
    pub fn for_mode(cfg: &EndpointConfig, text: String) -> Self {
        match cfg.mode {
            PromptMode::Raw => Prompt::Raw(text),
            PromptMode::Chat => Prompt::Chat {
                system: cfg.system_prompt.clone(),
                user: text,
            },
        }
    }
}

/// Request one completion, retrying transient failures with exponential
/// backoff. Returns the raw completion text; an exhausted retry budget is an
/// error, never an empty substitute.
pub fn complete(cfg: &EndpointConfig, prompt: &Prompt) -> Result<String, ExtractError> {
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(cfg.request_timeout_secs))
        .build();
    let max_tokens = cfg.max_new_tokens + MAX_TOKENS_SLACK;
    let (url, body) = match prompt {
        Prompt::Raw(text) => (
            format!("{}/v1/completions", cfg.base_url.trim_end_matches('/')),
            json!({
                "model": cfg.model_name,
                "prompt": text,
                "max_tokens": max_tokens,
                "temperature": cfg.temperature,
            }),
        ),
        Prompt::Chat { system, user } => (
            format!(
                "{}/v1/chat/completions",
                cfg.base_url.trim_end_matches('/')
            ),
            json!({
                "model": cfg.model_name,
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
                "max_tokens": max_tokens,
                "temperature": cfg.temperature,
            }),
        ),
    };

    let attempts = cfg.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1));
            thread::sleep(Duration::from_millis(backoff));
        }
        match agent.post(&url).send_json(body.clone()) {
            Ok(response) => {
                let value: serde_json::Value = response
                    .into_json()
                    .map_err(|e| ExtractError::MalformedResponse(e.to_string()))?;
                return extract_text(&value, cfg.mode);
            }
            Err(ureq::Error::Status(code, _)) if retryable_status(code) => {
                last_error = format!("HTTP {code}");
            }
            Err(ureq::Error::Status(code, response)) => {
                let body = response.into_string().unwrap_or_default();
                return Err(ExtractError::Endpoint {
                    attempts: attempt + 1,
                    message: format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()),
                });
            }
            Err(ureq::Error::Transport(t)) => {
                last_error = t.to_string();
            }
        }
    }
    Err(ExtractError::Endpoint {
        attempts,
        message: last_error,
    })
}

fn retryable_status(code: u16) -> bool {
    code == 429 || (500..=599).contains(&code)
}

fn extract_text(value: &serde_json::Value, mode: PromptMode) -> Result<String, ExtractError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ExtractError::MalformedResponse("missing choices[0]".to_string()))?;
    let text = match mode {
        PromptMode::Raw => choice.get("text").and_then(|t| t.as_str()),
        PromptMode::Chat => choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str()),
    };
    text.map(str::to_string).ok_or_else(|| {
        ExtractError::MalformedResponse(format!(
            "missing {} in choices[0]",
            match mode {
                PromptMode::Raw => "text",
                PromptMode::Chat => "message.content",
            }
        ))
    })
}
