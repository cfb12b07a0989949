//! Structured-output parsing with one bounded repair round trip.
//!
//! Model replies rarely arrive as clean JSON. The recovery ladder is:
//! direct parse, then balanced-bracket extraction of the outermost object or
//! array (string- and escape-aware), then a single repair call that appends
//! the parse error and asks the model to reply with valid JSON only. Two
//! consecutive unusable replies surface as a structured-output error that
//! carries both raw replies for diagnosis.

use std::fmt;

use serde_json::Value;

use super::{CallContext, ChatExchange, Gateway, GatewayError};
use crate::prompts::JSON_REPAIR_INSTRUCTION;

/// Kinds a required key's value may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    String,
    Number,
    Bool,
    Array,
    Object,
}

impl ValueKind {
    fn fits(&self, value: &Value) -> bool {
        match self {
            ValueKind::String => value.is_string(),
            ValueKind::Number => value.is_number(),
            ValueKind::Bool => value.is_boolean(),
            ValueKind::Array => value.is_array(),
            ValueKind::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ValueKind::String => "string",
            ValueKind::Number => "number",
            ValueKind::Bool => "boolean",
            ValueKind::Array => "array",
            ValueKind::Object => "object",
        };
        f.write_str(name)
    }
}

/// Expected shape of a structured reply.
#[derive(Debug, Clone)]
pub enum SchemaDescriptor {
    /// Any JSON array.
    Array,
    /// Any JSON object.
    Object,
    /// Object carrying at least the given keys with the given kinds.
    ObjectRequiring(Vec<(String, ValueKind)>),
    /// Object with caller-defined keys, or `[]` standing for "nothing found".
    ObjectOrEmptyArray,
}

impl SchemaDescriptor {
    /// Checks `value` against the descriptor; the error is human-readable and
    /// is fed back to the model in the repair prompt.
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        match self {
            SchemaDescriptor::Array => {
                if value.is_array() {
                    Ok(())
                } else {
                    Err("expected a JSON array".into())
                }
            }
            SchemaDescriptor::Object => {
                if value.is_object() {
                    Ok(())
                } else {
                    Err("expected a JSON object".into())
                }
            }
            SchemaDescriptor::ObjectRequiring(required) => {
                let map = value
                    .as_object()
                    .ok_or_else(|| "expected a JSON object".to_string())?;
                for (key, kind) in required {
                    match map.get(key) {
                        None => return Err(format!("missing required key {key:?}")),
                        Some(v) if !kind.fits(v) => {
                            return Err(format!("key {key:?} must be a {kind}"))
                        }
                        Some(_) => {}
                    }
                }
                Ok(())
            }
            SchemaDescriptor::ObjectOrEmptyArray => match value {
                Value::Object(_) => Ok(()),
                Value::Array(items) if items.is_empty() => Ok(()),
                Value::Array(_) => Err("expected a JSON object, or [] when empty".into()),
                _ => Err("expected a JSON object, or [] when empty".into()),
            },
        }
    }
}

impl fmt::Display for SchemaDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaDescriptor::Array => f.write_str("a JSON array"),
            SchemaDescriptor::Object => f.write_str("a JSON object"),
            SchemaDescriptor::ObjectRequiring(required) => {
                let keys: Vec<String> = required
                    .iter()
                    .map(|(k, kind)| format!("{k} ({kind})"))
                    .collect();
                write!(f, "a JSON object with keys: {}", keys.join(", "))
            }
            SchemaDescriptor::ObjectOrEmptyArray => {
                f.write_str("a JSON object, or [] when nothing applies")
            }
        }
    }
}

/// Extracts the first balanced top-level JSON object or array from free-form
/// text. Tracks string literals and escapes so brackets inside strings do not
/// count. Returns the exact substring from the opener to its matching closer.
pub fn extract_balanced(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == b'{' || b == b'[')?;
    let open = bytes[start];
    let close = if open == b'{' { b'}' } else { b']' };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_with_recovery(reply: &str, schema: &SchemaDescriptor) -> Result<Value, String> {
    let direct: Result<Value, _> = serde_json::from_str(reply.trim());
    let direct_err = match direct {
        Ok(value) => match schema.validate(&value) {
            Ok(()) => return Ok(value),
            Err(e) => e,
        },
        Err(e) => format!("JSON parse error: {e}"),
    };
    if let Some(fragment) = extract_balanced(reply) {
        if let Ok(value) = serde_json::from_str::<Value>(fragment) {
            if let Err(e) = schema.validate(&value) {
                return Err(format!("{direct_err}; extracted fragment: {e}"));
            }
            return Ok(value);
        }
    }
    Err(direct_err)
}

impl Gateway {
    /// Sends a prompt expected to yield JSON of the given shape. On an
    /// unusable reply, one repair round trip is issued with the parse error
    /// appended; a second unusable reply is an error carrying both raw
    /// replies. Both calls that produced replies are in the cost ledger.
    pub fn complete_structured(
        &self,
        ctx: &CallContext,
        system_text: &str,
        user_text: &str,
        schema: &SchemaDescriptor,
    ) -> Result<Value, GatewayError> {
        let first = self.complete(ctx, system_text, user_text)?;
        let first_err = match parse_with_recovery(&first.reply_text, schema) {
            Ok(value) => return Ok(value),
            Err(e) => e,
        };
        let repair_user = format!(
            "{user_text}\n\nYour previous reply was not usable: {first_err}. \
             Expected {schema}. Please {JSON_REPAIR_INSTRUCTION}."
        );
        let second = self.complete(ctx, system_text, &repair_user)?;
        match parse_with_recovery(&second.reply_text, schema) {
            Ok(value) => Ok(value),
            Err(second_err) => Err(GatewayError::StructuredOutput {
                message: format!("first attempt: {first_err}; repair attempt: {second_err}"),
                first_reply: first.reply_text,
                second_reply: second.reply_text,
            }),
        }
    }

    /// Like [`complete_structured`](Self::complete_structured) but also
    /// returns the exchange that produced the accepted value.
    pub fn complete_structured_with_exchange(
        &self,
        ctx: &CallContext,
        system_text: &str,
        user_text: &str,
        schema: &SchemaDescriptor,
    ) -> Result<(Value, ChatExchange), GatewayError> {
        let first = self.complete(ctx, system_text, user_text)?;
        if let Ok(value) = parse_with_recovery(&first.reply_text, schema) {
            return Ok((value, first));
        }
        let first_err = parse_with_recovery(&first.reply_text, schema).unwrap_err();
        let repair_user = format!(
            "{user_text}\n\nYour previous reply was not usable: {first_err}. \
             Expected {schema}. Please {JSON_REPAIR_INSTRUCTION}."
        );
        let second = self.complete(ctx, system_text, &repair_user)?;
        match parse_with_recovery(&second.reply_text, schema) {
            Ok(value) => Ok((value, second)),
            Err(second_err) => Err(GatewayError::StructuredOutput {
                message: format!("first attempt: {first_err}; repair attempt: {second_err}"),
                first_reply: first.reply_text,
                second_reply: second.reply_text,
            }),
        }
    }
}
