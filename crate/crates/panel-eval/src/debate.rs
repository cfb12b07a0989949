//! Three-phase in-group debate over one evaluation item.
//!
//! Phase 1: every agent evaluates independently (scores parsed from the
//! reply, one repair request when no score is readable). Phase 2: a
//! coordinator picks speakers for a bounded free debate; an agent leaves by
//! emitting the finish marker, and agents still unfinished when the round
//! budget runs out are finalized from their most recent scored turn.
//! Phase 3: the group score is the arithmetic mean of the final per-agent
//! scores — computed locally, never by a model — while a synthesis call
//! writes the textual summary.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{CallContext, Gateway, GatewayError, SchemaDescriptor, Stage, ValueKind};
use crate::personas::Persona;
use crate::prompts::{self, AgentSystemSlots, FINISH_MARKER};

#[derive(Debug, thiserror::Error)]
pub enum DebateError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("scale invalid: {0}")]
    Scale(String),
    #[error("group {group:?}: no agent produced a readable score in the first pass")]
    PhaseOneNoScores { group: String },
    #[error("group {group:?}: no scored final feedback to aggregate")]
    NoScoredFeedback { group: String },
    #[error("group {group:?} has no agents")]
    EmptyGroup { group: String },
    #[error("item {item_id:?}: every group debate failed")]
    AllGroupsFailed { item_id: String },
}

/// Kind of score scale an item is rated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleKind {
    Likert5,
    UnitInterval,
    Custom,
}

/// Closed numeric interval scores must fall in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreScale")]
pub struct ScoreScale {
    pub min: f64,
    pub max: f64,
    pub kind: ScaleKind,
}

#[derive(Deserialize)]
struct RawScoreScale {
    min: f64,
    max: f64,
    kind: ScaleKind,
}

impl TryFrom<RawScoreScale> for ScoreScale {
    type Error = String;
    fn try_from(raw: RawScoreScale) -> Result<Self, String> {
        ScoreScale::new(raw.min, raw.max, raw.kind)
    }
}

impl ScoreScale {
    pub fn new(min: f64, max: f64, kind: ScaleKind) -> Result<Self, String> {
        if !min.is_finite() || !max.is_finite() {
            return Err(format!("scale bounds must be finite, got [{min}, {max}]"));
        }
        if min >= max {
            return Err(format!("scale minimum must be below maximum, got [{min}, {max}]"));
        }
        Ok(ScoreScale { min, max, kind })
    }

    /// The 1–5 Likert scale.
    pub fn likert5() -> Self {
        ScoreScale { min: 1.0, max: 5.0, kind: ScaleKind::Likert5 }
    }

    /// The [0, 1] scale used by reference-overlap scores.
    pub fn unit_interval() -> Self {
        ScoreScale { min: 0.0, max: 1.0, kind: ScaleKind::UnitInterval }
    }

    pub fn contains(&self, value: f64) -> bool {
        value.is_finite() && value >= self.min && value <= self.max
    }

    /// Affine map of `value` onto [0, 1].
    pub fn normalized(&self, value: f64) -> f64 {
        (value - self.min) / (self.max - self.min)
    }
}

fn default_scale() -> ScoreScale {
    ScoreScale::likert5()
}

fn default_response_format() -> String {
    "Feedback: <your feedback>\nScore: <score>".to_string()
}

fn default_content_kind() -> String {
    "response".to_string()
}

fn default_context_kind() -> String {
    "context".to_string()
}

/// One piece of generated text to be judged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationItem {
    pub item_id: String,
    /// The generated text under evaluation.
    pub content: String,
    /// Source or prompt the content responds to; may be empty.
    #[serde(default)]
    pub context: String,
    pub task_description: String,
    #[serde(default = "default_response_format")]
    pub response_format: String,
    /// What the content is, e.g. "story" or "summary"; used in prompts.
    #[serde(default = "default_content_kind")]
    pub content_kind: String,
    /// What the context is, e.g. "question" or "source text".
    #[serde(default = "default_context_kind")]
    pub context_kind: String,
    #[serde(default = "default_scale")]
    pub scale: ScoreScale,
}

/// One spoken turn, in either phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
    /// True when the text contains the finish marker.
    pub declared_finished: bool,
    /// Score parsed from the text, within the item's scale.
    pub parsed_score: Option<f64>,
}

/// Full transcript state of one group's debate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebateState {
    pub group_name: String,
    pub agents: Vec<Persona>,
    /// Phase-1 records (one per agent, in agent order) followed by debate
    /// turns. Never longer than `agents.len() + max_rounds`.
    pub history: Vec<TurnRecord>,
    pub finished_agents: BTreeSet<String>,
    /// Each agent's final evaluation. When the finishing turn itself had no
    /// readable score, the score is backfilled from that agent's most recent
    /// scored turn, so this record may carry a score its text does not.
    pub final_feedback: BTreeMap<String, TurnRecord>,
    pub max_rounds: usize,
}

/// Outcome of one group's debate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupVerdict {
    pub group_name: String,
    pub per_agent_scores: BTreeMap<String, f64>,
    /// Arithmetic mean of `per_agent_scores`, computed locally.
    pub group_score: f64,
    /// Model-written summary; empty when the synthesis call failed.
    pub synthesis_text: String,
}

/// A judge's verdict on one item, on the item's native scale and normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeScore {
    pub item_id: String,
    pub judge_id: String,
    pub score: f64,
    pub normalized_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

/// One group's transcript plus its verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupDebate {
    pub state: DebateState,
    pub verdict: GroupVerdict,
}

/// A named group with its debate agents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupAgents {
    pub group_name: String,
    pub agents: Vec<Persona>,
}

/// Item-level outcome: the judge score plus every group transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemEvaluation {
    pub score: JudgeScore,
    pub debates: Vec<GroupDebate>,
}

/// Extracts the evaluation score from a reply: every number preceded by the
/// word "score" is considered, and the last one within the scale wins.
pub fn parse_score(text: &str, scale: &ScoreScale) -> Option<f64> {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let pattern = PATTERN
        .get_or_init(|| Regex::new(r"(?i)score[^0-9+\-]*([+-]?\d+(?:\.\d+)?)").expect("valid regex"));
    pattern
        .captures_iter(text)
        .filter_map(|c| c.get(1)?.as_str().parse::<f64>().ok())
        .filter(|v| scale.contains(*v))
        .last()
}

fn render_history(records: &[TurnRecord]) -> String {
    if records.is_empty() {
        return "(no debate turns yet)".to_string();
    }
    records
        .iter()
        .map(|r| prompts::history_line(&r.speaker, &r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn system_text(agent: &Persona, item: &EvaluationItem) -> String {
    prompts::agent_system(&AgentSystemSlots {
        agent_name: &agent.persona_name,
        demographic_info: &agent.demographic_info,
        evaluative_dimension: &agent.evaluative_dimension,
        specialty: &agent.specialty,
        psychological_traits: &agent.psychological_traits,
        social_relationships: &agent.social_relationships,
        content_kind: &item.content_kind,
        task_description: &item.task_description,
        content: &item.content,
        context: &item.context,
        response_format: &item.response_format,
    })
}

/// Phase 1: one independent evaluation per agent, in agent order. A reply
/// without a readable score triggers one repair request; if it still has no
/// score the turn is kept score-less. Fails only when *no* agent scored.
fn phase1_initial(
    gateway: &Gateway,
    unit: &str,
    item: &EvaluationItem,
    group_name: &str,
    agents: &[Persona],
) -> Result<Vec<TurnRecord>, DebateError> {
    let ctx = CallContext::new(Stage::Debate, unit);
    let user = prompts::phase1_user(&item.content, &item.context, &item.response_format);
    let mut records = Vec::new();
    for (turn_index, agent) in agents.iter().enumerate() {
        let system = system_text(agent, item);
        let mut text = gateway.complete(&ctx, &system, &user)?.reply_text;
        let mut score = parse_score(&text, &item.scale);
        if score.is_none() {
            log::warn!(
                "{unit}: no readable score from {:?}; requesting the exact format once",
                agent.persona_name
            );
            let repair = format!(
                "{user}\n\nYour previous reply did not include a readable score between {} and {}. \
                 Reply again using exactly this format: {}",
                item.scale.min, item.scale.max, item.response_format
            );
            text = gateway.complete(&ctx, &system, &repair)?.reply_text;
            score = parse_score(&text, &item.scale);
        }
        records.push(TurnRecord {
            turn_index,
            speaker: agent.persona_name.clone(),
            text: text.clone(),
            declared_finished: text.contains(FINISH_MARKER),
            parsed_score: score,
        });
    }
    if records.iter().all(|r| r.parsed_score.is_none()) {
        return Err(DebateError::PhaseOneNoScores { group: group_name.to_string() });
    }
    Ok(records)
}

/// Phase 2 speaker selection: ask the coordinator, accept its answer only if
/// it names exactly one unfinished agent; otherwise fall back to the
/// unfinished agent with the fewest turns so far (ties in agent order).
/// Returns the index into `state.agents`.
fn select_next_speaker(gateway: &Gateway, unit: &str, state: &DebateState) -> usize {
    let unfinished: Vec<usize> = (0..state.agents.len())
        .filter(|&i| !state.finished_agents.contains(&state.agents[i].persona_name))
        .collect();
    debug_assert!(!unfinished.is_empty(), "speaker selection with everyone finished");

    let fallback = || -> usize {
        *unfinished
            .iter()
            .min_by_key(|&&i| {
                state
                    .history
                    .iter()
                    .filter(|r| r.speaker == state.agents[i].persona_name)
                    .count()
            })
            .expect("at least one unfinished agent")
    };

    let names: Vec<&str> = unfinished
        .iter()
        .map(|&i| state.agents[i].persona_name.as_str())
        .collect();
    let ctx = CallContext::new(Stage::Debate, unit);
    let user = prompts::coordinator_user(&render_history(&state.history), &names.join(", "));
    let reply = match gateway.complete(&ctx, "", &user) {
        Ok(exchange) => exchange.reply_text,
        Err(e) => {
            log::warn!("{unit}: coordinator call failed ({e}); using deterministic fallback");
            return fallback();
        }
    };
    let trimmed = reply.trim();
    if let Some(&exact) = unfinished
        .iter()
        .find(|&&i| state.agents[i].persona_name == trimmed)
    {
        return exact;
    }
    let mentioned: Vec<usize> = unfinished
        .iter()
        .copied()
        .filter(|&i| trimmed.contains(state.agents[i].persona_name.as_str()))
        .collect();
    if mentioned.len() == 1 {
        return mentioned[0];
    }
    log::warn!("{unit}: coordinator reply named no single eligible agent; using fallback");
    fallback()
}

/// Finalizes an agent without a finishing turn of its own: prefers the most
/// recent scored turn, falling back to the most recent turn of any kind.
fn force_finalize(state: &mut DebateState, agent_index: usize) {
    let name = state.agents[agent_index].persona_name.clone();
    let record = state
        .history
        .iter()
        .rev()
        .find(|r| r.speaker == name && r.parsed_score.is_some())
        .or_else(|| state.history.iter().rev().find(|r| r.speaker == name))
        .cloned();
    if let Some(record) = record {
        state.final_feedback.insert(name.clone(), record);
    }
    state.finished_agents.insert(name);
}

/// Phase 2: bounded free debate. An agent finishes by emitting the marker;
/// a speaker turn that still fails after one extra attempt force-finalizes
/// that speaker. Anyone left unfinished after the round budget is
/// force-finalized in agent order.
fn phase2_free_debate(
    gateway: &Gateway,
    unit: &str,
    item: &EvaluationItem,
    state: &mut DebateState,
) -> Result<(), DebateError> {
    let n_agents = state.agents.len();
    let phase1_block = render_history(&state.history[..n_agents]);
    let ctx = CallContext::new(Stage::Debate, unit);

    for _ in 0..state.max_rounds {
        if state.finished_agents.len() == n_agents {
            break;
        }
        let speaker = select_next_speaker(gateway, unit, state);
        let agent = state.agents[speaker].clone();
        let system = system_text(&agent, item);
        let user = prompts::phase2_user(
            &phase1_block,
            &render_history(&state.history[n_agents..]),
            &item.response_format,
        );
        let text = match gateway.complete(&ctx, &system, &user) {
            Ok(exchange) => exchange.reply_text,
            Err(first) => {
                log::warn!("{unit}: speaker turn for {:?} failed ({first}); retrying once", agent.persona_name);
                match gateway.complete(&ctx, &system, &user) {
                    Ok(exchange) => exchange.reply_text,
                    Err(second) => {
                        log::warn!(
                            "{unit}: speaker turn for {:?} failed again ({second}); force-finalizing",
                            agent.persona_name
                        );
                        force_finalize(state, speaker);
                        continue;
                    }
                }
            }
        };
        let mut record = TurnRecord {
            turn_index: state.history.len(),
            speaker: agent.persona_name.clone(),
            text: text.clone(),
            declared_finished: text.contains(FINISH_MARKER),
            parsed_score: parse_score(&text, &item.scale),
        };
        state.history.push(record.clone());
        if record.declared_finished {
            if record.parsed_score.is_none() {
                record.parsed_score = state
                    .history
                    .iter()
                    .rev()
                    .find(|r| r.speaker == agent.persona_name && r.parsed_score.is_some())
                    .and_then(|r| r.parsed_score);
            }
            state.final_feedback.insert(agent.persona_name.clone(), record);
            state.finished_agents.insert(agent.persona_name.clone());
        }
    }

    for i in 0..n_agents {
        if !state.finished_agents.contains(&state.agents[i].persona_name) {
            log::warn!(
                "{unit}: round budget exhausted; force-finalizing {:?}",
                state.agents[i].persona_name
            );
            force_finalize(state, i);
        }
    }
    Ok(())
}

/// Phase 3: the group score is the local arithmetic mean of the scored
/// final evaluations; the synthesis text comes from one structured call and
/// degrades to an empty string when that call fails.
fn phase3_aggregate(
    gateway: &Gateway,
    unit: &str,
    state: &DebateState,
) -> Result<GroupVerdict, DebateError> {
    let mut per_agent_scores = BTreeMap::new();
    for agent in &state.agents {
        if let Some(record) = state.final_feedback.get(&agent.persona_name) {
            if let Some(score) = record.parsed_score {
                per_agent_scores.insert(agent.persona_name.clone(), score);
            }
        }
    }
    if per_agent_scores.is_empty() {
        return Err(DebateError::NoScoredFeedback { group: state.group_name.clone() });
    }
    let group_score =
        per_agent_scores.values().sum::<f64>() / per_agent_scores.len() as f64;

    let feedback_block = state
        .agents
        .iter()
        .filter_map(|a| state.final_feedback.get(&a.persona_name))
        .map(|r| prompts::history_line(&r.speaker, &r.text))
        .collect::<Vec<_>>()
        .join("\n");
    let ctx = CallContext::new(Stage::Debate, unit);
    let user = prompts::aggregator_user(&feedback_block, group_score);
    let schema = SchemaDescriptor::ObjectRequiring(vec![("Feedback".into(), ValueKind::String)]);
    let synthesis_text = match gateway.complete_structured(&ctx, "", &user, &schema) {
        Ok(value) => value
            .get("Feedback")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string(),
        Err(e) => {
            log::warn!("{unit}: synthesis call failed ({e}); keeping empty synthesis");
            String::new()
        }
    };

    Ok(GroupVerdict {
        group_name: state.group_name.clone(),
        per_agent_scores,
        group_score,
        synthesis_text,
    })
}

/// Runs all three phases for one group. `max_rounds` defaults to three
/// rounds per agent.
pub fn run_group_debate(
    gateway: &Gateway,
    unit: &str,
    item: &EvaluationItem,
    group_name: &str,
    agents: &[Persona],
    max_rounds: Option<usize>,
) -> Result<GroupDebate, DebateError> {
    if agents.is_empty() {
        return Err(DebateError::EmptyGroup { group: group_name.to_string() });
    }
    let max_rounds = max_rounds.unwrap_or(agents.len() * 3);
    let history = phase1_initial(gateway, unit, item, group_name, agents)?;
    let mut state = DebateState {
        group_name: group_name.to_string(),
        agents: agents.to_vec(),
        history,
        finished_agents: BTreeSet::new(),
        final_feedback: BTreeMap::new(),
        max_rounds,
    };
    phase2_free_debate(gateway, unit, item, &mut state)?;
    let verdict = phase3_aggregate(gateway, unit, &state)?;
    Ok(GroupDebate { state, verdict })
}

/// Combines group verdicts into the item-level judge score: the overall
/// score is the mean of the group scores, then normalized onto [0, 1].
pub fn assemble_item_score(
    item: &EvaluationItem,
    judge_id: &str,
    verdicts: &[GroupVerdict],
) -> Result<JudgeScore, DebateError> {
    if verdicts.is_empty() {
        return Err(DebateError::AllGroupsFailed { item_id: item.item_id.clone() });
    }
    let score = verdicts.iter().map(|v| v.group_score).sum::<f64>() / verdicts.len() as f64;
    Ok(JudgeScore {
        item_id: item.item_id.clone(),
        judge_id: judge_id.to_string(),
        score,
        normalized_score: item.scale.normalized(score),
        feedback: None,
    })
}

/// Evaluates one item with every group, sequentially. A failed group debate
/// is excluded with a warning; the item fails only when every group fails.
pub fn evaluate_item(
    gateway: &Gateway,
    item: &EvaluationItem,
    groups: &[GroupAgents],
    judge_id: &str,
    max_rounds: Option<usize>,
) -> Result<ItemEvaluation, DebateError> {
    let mut debates = Vec::new();
    for group in groups {
        let unit = format!("{}/{}", item.item_id, group.group_name);
        match run_group_debate(gateway, &unit, item, &group.group_name, &group.agents, max_rounds) {
            Ok(debate) => debates.push(debate),
            Err(e) => log::warn!("{unit}: group debate failed and is excluded ({e})"),
        }
    }
    let verdicts: Vec<GroupVerdict> = debates.iter().map(|d| d.verdict.clone()).collect();
    let score = assemble_item_score(item, judge_id, &verdicts)?;
    Ok(ItemEvaluation { score, debates })
}
