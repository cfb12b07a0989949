//! Deterministic scripted backend.
//!
//! A script is a JSON list of reply entries. For each call the entries are
//! scanned in file order and the first one that fits wins:
//!
//! - `{"key": "<hex>", "reply": "..."}` fits when `<hex>` equals the
//!   [`exchange_key`](super::exchange_key) of the exact (system, user) pair;
//! - `{"match": "needle", "reply": "..."}` fits when the needle occurs in the
//!   system and user texts joined with a newline; `"match"` may also be a
//!   list of needles that must all occur;
//! - `{"reply": "..."}` (neither field) fits any call, forming an ordered
//!   fallback for unkeyed calls.
//!
//! The reply is a pure function of (system text, user text, script): no
//! entry is ever consumed, so concurrent callers and repeated runs see
//! identical replies. A call that fits no entry is a definitive error.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{exchange_key, BackendError, BackendReply, ChatBackend, GatewayError};

/// One or several substrings that must all occur in the joined prompt text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatchSpec {
    One(String),
    All(Vec<String>),
}

impl MatchSpec {
    fn fits(&self, haystack: &str) -> bool {
        match self {
            MatchSpec::One(needle) => haystack.contains(needle),
            MatchSpec::All(needles) => needles.iter().all(|n| haystack.contains(n)),
        }
    }
}

/// One scripted reply with its trigger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Exact content key of the call this entry answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    /// Substring trigger tested against `system + "\n" + user`.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_text: Option<MatchSpec>,
    pub reply: String,
}

impl ScriptEntry {
    fn fits(&self, key: &str, haystack: &str) -> bool {
        if let Some(expected) = &self.key {
            if expected == key {
                return true;
            }
        }
        if let Some(spec) = &self.match_text {
            if spec.fits(haystack) {
                return true;
            }
        }
        self.key.is_none() && self.match_text.is_none()
    }
}

/// Replays scripted replies; see the module docs for the lookup rules.
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    script_digest: String,
}

impl ScriptedBackend {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let bytes = fs::read(path).map_err(|e| {
            GatewayError::Config(format!("cannot read script {}: {e}", path.display()))
        })?;
        let entries: Vec<ScriptEntry> = serde_json::from_slice(&bytes).map_err(|e| {
            GatewayError::Config(format!("malformed script {}: {e}", path.display()))
        })?;
        Ok(Self::from_entries_with_digest(
            entries,
            hex::encode(Sha256::digest(&bytes)),
        ))
    }

    pub fn from_entries(entries: Vec<ScriptEntry>) -> Self {
        let serialized = serde_json::to_vec(&entries).unwrap_or_default();
        Self::from_entries_with_digest(entries, hex::encode(Sha256::digest(&serialized)))
    }

    fn from_entries_with_digest(entries: Vec<ScriptEntry>, script_digest: String) -> Self {
        ScriptedBackend {
            entries,
            script_digest,
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, system_text: &str, user_text: &str) -> Result<BackendReply, BackendError> {
        let key = exchange_key(system_text, user_text);
        let haystack = format!("{system_text}\n{user_text}");
        for entry in &self.entries {
            if entry.fits(&key, &haystack) {
                return Ok(BackendReply {
                    text: entry.reply.clone(),
                    prompt_tokens: None,
                    reply_tokens: None,
                });
            }
        }
        let user_preview: String = user_text.chars().take(120).collect();
        Err(BackendError::Fatal(format!(
            "no script entry fits call (key {key}, user text starts {user_preview:?})"
        )))
    }

    fn fingerprint(&self) -> String {
        format!("scripted:{}", self.script_digest)
    }
}
