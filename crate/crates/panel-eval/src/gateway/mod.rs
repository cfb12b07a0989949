//! Chat-model access with a uniform interface over a remote
//! OpenAI-compatible endpoint and a deterministic scripted backend.
//!
//! Every successful call is recorded in an append-only [`CostLedger`] so a
//! run can account for token usage per pipeline stage and per work unit.
//! Transport failures are retried with bounded exponential backoff; a failed
//! attempt that produced no reply never reaches the ledger.

mod remote;
mod scripted;
mod structured;

pub use remote::RemoteBackend;
pub use scripted::{MatchSpec, ScriptEntry, ScriptedBackend};
pub use structured::{extract_balanced, SchemaDescriptor, ValueKind};

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which kind of backend a [`ProviderConfig`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// HTTP chat-completion endpoint speaking the OpenAI wire format.
    RemoteEndpoint,
    /// Deterministic replay from a script file; used for tests and offline
    /// runs.
    ScriptedMock,
}

/// Connection and sampling settings for a model provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub backend: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Chat-completions URL; required for the remote backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_var: Option<String>,
    /// Reply script; required for the scripted backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
}

impl ProviderConfig {
    /// Checks the invariants that hold for every backend kind.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(GatewayError::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens < 1 {
            return Err(GatewayError::Config(
                "max_output_tokens must be at least 1".into(),
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::Config("model_name must be non-empty".into()));
        }
        match self.backend {
            BackendKind::RemoteEndpoint => {
                if self.endpoint_url.as_deref().unwrap_or("").trim().is_empty() {
                    return Err(GatewayError::Config(
                        "remote-endpoint backend requires endpoint_url".into(),
                    ));
                }
            }
            BackendKind::ScriptedMock => {
                if self.script_path.is_none() {
                    return Err(GatewayError::Config(
                        "scripted-mock backend requires script_path".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One prompt/reply round trip, with token accounting.
///
/// Exchanges are immutable once recorded; the counts of a recorded exchange
/// never change afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub reply_text: String,
    pub prompt_token_count: u64,
    pub reply_token_count: u64,
    /// True when the backend did not report usage and the counts are the
    /// whitespace-delimited approximation.
    pub approximate: bool,
}

/// Pipeline stage a gateway call belongs to; used for cost attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Extraction,
    Merge,
    Personas,
    Debate,
    Baseline,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Extraction => "extraction",
            Stage::Merge => "merge",
            Stage::Personas => "personas",
            Stage::Debate => "debate",
            Stage::Baseline => "baseline",
        };
        f.write_str(name)
    }
}

/// Attribution for one gateway call: the stage plus a caller-chosen unit
/// label (for example `doc-1/chunk-0` or `item-3/Teachers`). Calls within one
/// unit are sequential, which keeps ledger ordering schedule-independent.
#[derive(Debug, Clone)]
pub struct CallContext {
    pub stage: Stage,
    pub unit: String,
}

impl CallContext {
    pub fn new(stage: Stage, unit: impl Into<String>) -> Self {
        CallContext {
            stage,
            unit: unit.into(),
        }
    }
}

/// One ledger row: where the tokens were spent and the exchange that spent
/// them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostEntry {
    pub stage: Stage,
    pub unit: String,
    pub exchange: ChatExchange,
}

impl CostEntry {
    pub fn total_tokens(&self) -> u64 {
        self.exchange.prompt_token_count + self.exchange.reply_token_count
    }
}

/// Append-only, thread-safe record of every successful exchange.
#[derive(Debug, Default)]
pub struct CostLedger {
    entries: Mutex<Vec<CostEntry>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: CostEntry) {
        self.entries.lock().expect("ledger poisoned").push(entry);
    }

    /// Entries in append order.
    pub fn entries(&self) -> Vec<CostEntry> {
        self.entries.lock().expect("ledger poisoned").clone()
    }

    /// Entries stably sorted by (stage, unit). Within one unit calls are
    /// sequential, so this order is identical for every worker schedule.
    pub fn entries_sorted(&self) -> Vec<CostEntry> {
        let mut entries = self.entries();
        entries.sort_by(|a, b| (a.stage, &a.unit).cmp(&(b.stage, &b.unit)));
        entries
    }

    /// Exact sum of prompt and reply tokens over all entries.
    pub fn total_tokens(&self) -> u64 {
        self.entries
            .lock()
            .expect("ledger poisoned")
            .iter()
            .map(CostEntry::total_tokens)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw reply from a backend, before token approximation is applied.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub reply_tokens: Option<u64>,
}

/// Backend-level failure, split by whether a retry can help.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Network-ish failure; the gateway retries these.
    #[error("transport failure: {0}")]
    Transport(String),
    /// Definitive failure (bad request, missing script entry); never retried.
    #[error("{0}")]
    Fatal(String),
}

/// Anything that can answer a (system, user) prompt pair.
pub trait ChatBackend: Send + Sync {
    fn send(&self, system_text: &str, user_text: &str) -> Result<BackendReply, BackendError>;

    /// Stable description of the backend identity and its inputs (model,
    /// endpoint, script digest); folded into resume stamps.
    fn fingerprint(&self) -> String;
}

/// Errors surfaced by the gateway.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("structured output unusable after repair: {message}")]
    StructuredOutput {
        message: String,
        first_reply: String,
        second_reply: String,
    },
}

/// Retry settings for transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each later attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

/// Stable content key for a prompt pair, used by script files to pin a reply
/// to one exact call. Hex SHA-256 over the length-prefixed pair, so no two
/// distinct pairs collide by concatenation.
pub fn exchange_key(system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((system_text.len() as u64).to_be_bytes());
    hasher.update(system_text.as_bytes());
    hasher.update((user_text.len() as u64).to_be_bytes());
    hasher.update(user_text.as_bytes());
    hex::encode(hasher.finalize())
}

/// Whitespace-delimited token approximation used when a backend reports no
/// usage numbers.
pub fn approx_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Shared front door for every model call the pipeline makes.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    ledger: Arc<CostLedger>,
    retry: RetryPolicy,
}

impl Gateway {
    /// Builds the backend described by `config`. For the remote backend the
    /// credential is resolved here, before any request is sent.
    pub fn new(config: &ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match config.backend {
            BackendKind::ScriptedMock => {
                let path = config.script_path.as_ref().expect("validated");
                Arc::new(ScriptedBackend::from_file(path)?)
            }
            BackendKind::RemoteEndpoint => Arc::new(RemoteBackend::from_config(config)?),
        };
        Ok(Gateway {
            backend,
            ledger: Arc::new(CostLedger::new()),
            retry: RetryPolicy::default(),
        })
    }

    /// Wraps an arbitrary backend; used by tests to drive the debate engine
    /// with programmable reply policies.
    pub fn with_backend(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            ledger: Arc::new(CostLedger::new()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// A sibling gateway on the same backend with an empty ledger of its
    /// own — used to attribute costs to one unit of work (one debate, one
    /// pipeline stage) without sharing a global ledger.
    pub fn with_fresh_ledger(&self) -> Gateway {
        Gateway {
            backend: Arc::clone(&self.backend),
            ledger: Arc::new(CostLedger::new()),
            retry: self.retry.clone(),
        }
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn backend_fingerprint(&self) -> String {
        self.backend.fingerprint()
    }

    /// Sends one prompt pair, retrying transport failures with exponential
    /// backoff. Only the attempt that produced a reply is recorded in the
    /// ledger, so retries never duplicate entries.
    pub fn complete(
        &self,
        ctx: &CallContext,
        system_text: &str,
        user_text: &str,
    ) -> Result<ChatExchange, GatewayError> {
        let mut last_transport = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.backend.send(system_text, user_text) {
                Ok(reply) => {
                    let approximate = reply.prompt_tokens.is_none() || reply.reply_tokens.is_none();
                    let prompt_token_count = reply.prompt_tokens.unwrap_or_else(|| {
                        approx_token_count(system_text) + approx_token_count(user_text)
                    });
                    let reply_token_count = reply
                        .reply_tokens
                        .unwrap_or_else(|| approx_token_count(&reply.text));
                    let exchange = ChatExchange {
                        system_text: system_text.to_string(),
                        user_text: user_text.to_string(),
                        reply_text: reply.text,
                        prompt_token_count,
                        reply_token_count,
                        approximate,
                    };
                    self.ledger.record(CostEntry {
                        stage: ctx.stage,
                        unit: ctx.unit.clone(),
                        exchange: exchange.clone(),
                    });
                    return Ok(exchange);
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Backend(message));
                }
                Err(BackendError::Transport(message)) => {
                    last_transport = message;
                    if attempt < self.retry.max_attempts {
                        let delay = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                        std::thread::sleep(delay);
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.max_attempts,
            message: last_transport,
        })
    }
}
