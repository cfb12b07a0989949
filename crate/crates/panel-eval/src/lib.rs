//! Stakeholder-panel evaluation of generated text.
//!
//! The library builds a panel of stakeholder persona agents from a document
//! corpus, lets each stakeholder group debate the quality of a piece of
//! generated content in three phases (independent scoring, free debate,
//! aggregation), and measures how well the resulting judge scores align with
//! human ratings.
//!
//! Module map:
//!
//! - [`gateway`] — chat-model access: a remote OpenAI-compatible endpoint or a
//!   deterministic scripted backend, plus structured-output parsing/repair and
//!   a token cost ledger.
//! - [`corpus`] — document loading and paragraph-aware chunking.
//! - [`perspectives`] — stakeholder extraction from chunks and cross-document
//!   consolidation into stakeholder groups.
//! - [`personas`] — five-attribute persona construction per evaluative
//!   dimension, plus the deterministic simple-role variant.
//! - [`debate`] — the three-phase in-group debate protocol and per-item
//!   verdicts.
//! - [`baselines`] — single- and dual-agent baseline judges (rubric judge,
//!   two-role discussion judge, simple-role panel, lexical overlap).
//! - [`metrics`] — rank correlations, inter-rater reliability, lexical
//!   overlap, score normalization, and alignment reports.
//! - [`dataset`] — evaluation dataset manifests, validation, and balanced
//!   sampling.
//! - [`pipeline`] — the resumable end-to-end run orchestrator and cost
//!   reporting.
//! - [`prompts`] — every prompt template used by the pipeline, with render
//!   helpers.

pub mod baselines;
pub mod corpus;
pub mod dataset;
pub mod debate;
pub mod gateway;
pub mod metrics;
pub mod personas;
pub mod perspectives;
pub mod pipeline;
pub mod prompts;
