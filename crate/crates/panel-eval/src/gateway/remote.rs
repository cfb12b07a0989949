//! OpenAI-compatible chat-completion backend.
//!
//! Speaks the common wire shape: `POST endpoint_url` with a JSON body of
//! model, messages, and sampling settings; reads the first choice's message
//! content and the usage block. Works against any service that accepts this
//! format. The API key is resolved from the configured environment variable
//! when the backend is constructed — before any request is sent — and is
//! never written to disk.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendReply, ChatBackend, GatewayError, ProviderConfig};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// HTTP client for one configured endpoint and model.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    endpoint_url: String,
    api_key: String,
    model_name: String,
    temperature: f64,
    max_output_tokens: u32,
}

impl RemoteBackend {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let endpoint_url = config
            .endpoint_url
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend requires endpoint_url".into()))?;
        let env_var = config.api_key_env_var.as_deref().ok_or_else(|| {
            GatewayError::Config("remote backend requires api_key_env_var".into())
        })?;
        let api_key = std::env::var(env_var).map_err(|_| {
            GatewayError::Config(format!(
                "credential environment variable {env_var} is not set"
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteBackend {
            client,
            endpoint_url,
            api_key,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn send(&self, system_text: &str, user_text: &str) -> Result<BackendReply, BackendError> {
        let request = WireRequest {
            model: &self.model_name,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: system_text,
                },
                WireMessage {
                    role: "user",
                    content: user_text,
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_output_tokens,
        };
        let response = self
            .client
            .post(&self.endpoint_url)
            .bearer_auth(&self.api_key)
            .json(&request)
            .send()
            .map_err(|e| BackendError::Transport(format!("request failed: {e}")))?;

        let status = response.status();
        if !status.is_success() {
            let body: String = response.text().unwrap_or_default().chars().take(400).collect();
            let message = format!("endpoint returned {status}: {body}");
            // Overload and server-side hiccups are worth retrying; the rest
            // (bad request, auth) will not improve on a second attempt.
            return if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error()
            {
                Err(BackendError::Transport(message))
            } else {
                Err(BackendError::Fatal(message))
            };
        }

        let parsed: WireResponse = response
            .json()
            .map_err(|e| BackendError::Fatal(format!("malformed completion response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Fatal("completion response has no choices".into()))?;
        let usage = parsed.usage.unwrap_or(WireUsage {
            prompt_tokens: None,
            completion_tokens: None,
        });
        Ok(BackendReply {
            text: choice.message.content,
            prompt_tokens: usage.prompt_tokens,
            reply_tokens: usage.completion_tokens,
        })
    }

    fn fingerprint(&self) -> String {
        format!(
            "remote:{}:{}:t{}:m{}",
            self.endpoint_url, self.model_name, self.temperature, self.max_output_tokens
        )
    }
}
