//! Baseline judges the stakeholder panel is compared against.
//!
//! * `run_rubric_judge` — one form-filling call per item on a five-point
//!   scale, optionally averaged over several samples.
//! * `run_dual_role_judge` — two fixed referee roles discuss the item for a
//!   set number of rounds, then each role's final scores are averaged.
//! * `simple_role_groups` — strips the panel down to one minimal
//!   role-played agent per stakeholder group (the debate engine is reused
//!   unchanged on these agents).
//! * `run_reference_overlap_judge` — no model at all: longest-common-
//!   subsequence overlap between the content and its reference context.

use std::sync::OnceLock;

use regex::Regex;

use crate::debate::{EvaluationItem, GroupAgents, JudgeScore, ScoreScale};
use crate::gateway::{CallContext, Gateway, GatewayError, Stage};
use crate::metrics::{self, MetricError};
use crate::personas::{build_simple_role, RoleTemplates};
use crate::perspectives::StakeholderGroup;
use crate::prompts;

/// Judge identifier of the full persona panel.
pub const PANEL_JUDGE_ID: &str = "panel";
/// Judge identifier of the single-call rubric judge.
pub const RUBRIC_JUDGE_ID: &str = "g-eval";
/// Judge identifier of the two-role discussion judge.
pub const DUAL_ROLE_JUDGE_ID: &str = "chat-eval";
/// Judge identifier of the minimal role-played panel.
pub const SIMPLE_ROLE_JUDGE_ID: &str = "simple-role";
/// Judge identifier of the reference-overlap judge.
pub const REFERENCE_OVERLAP_JUDGE_ID: &str = "rouge-l";

/// Default number of discussion rounds for the two-role judge.
pub const DEFAULT_DISCUSSION_ROUNDS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{judge_id} judge got no readable score for item {item_id:?}: {detail}")]
    Unparseable {
        judge_id: String,
        item_id: String,
        detail: String,
    },
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("discussion rounds must be at least 1")]
    ZeroRounds,
    #[error("reference-overlap judge failed on item {item_id:?}: {source}")]
    Overlap {
        item_id: String,
        source: MetricError,
    },
}

/// Last in-range number following an "Overall Quality" label, with a plain
/// "score" label as fallback.
fn parse_rubric_score(text: &str, scale: &ScoreScale) -> Option<f64> {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let pattern = PATTERN.get_or_init(|| {
        Regex::new(r"(?i)overall quality[^0-9+\-]*([+-]?\d+(?:\.\d+)?)").expect("valid regex")
    });
    pattern
        .captures_iter(text)
        .filter_map(|c| c.get(1)?.as_str().parse::<f64>().ok())
        .filter(|v| scale.contains(*v))
        .last()
        .or_else(|| crate::debate::parse_score(text, scale))
}

/// Last in-range number following "The score of Assistant one".
fn parse_first_assistant_score(text: &str, scale: &ScoreScale) -> Option<f64> {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let pattern = PATTERN.get_or_init(|| {
        Regex::new(r"(?i)score of assistant (?:one|1)[^0-9+\-]*([+-]?\d+(?:\.\d+)?)")
            .expect("valid regex")
    });
    pattern
        .captures_iter(text)
        .filter_map(|c| c.get(1)?.as_str().parse::<f64>().ok())
        .filter(|v| scale.contains(*v))
        .last()
}

/// Single-call rubric judge. Each of the `samples` calls is parsed for its
/// Overall Quality score (one repair request when unreadable); the judge
/// score is the mean over samples.
pub fn run_rubric_judge(
    gateway: &Gateway,
    item: &EvaluationItem,
    criteria: &str,
    samples: usize,
) -> Result<JudgeScore, JudgeError> {
    if samples == 0 {
        return Err(JudgeError::ZeroSamples);
    }
    let user = prompts::rubric_judge_user(
        &item.content_kind,
        &item.task_description,
        criteria,
        &item.context,
        &item.content,
    );
    let mut total = 0.0;
    for sample in 0..samples {
        let ctx = CallContext::new(
            Stage::Baseline,
            format!("{}/{}/sample-{sample:02}", RUBRIC_JUDGE_ID, item.item_id),
        );
        let text = gateway.complete(&ctx, "", &user)?.reply_text;
        let mut score = parse_rubric_score(&text, &item.scale);
        if score.is_none() {
            log::warn!(
                "{}/{}: sample {sample} had no readable score; requesting the form once",
                RUBRIC_JUDGE_ID,
                item.item_id
            );
            let repair = format!(
                "{user}\n\nYour previous reply did not include a readable score. Fill in the \
                 evaluation form exactly, e.g. \"Overall Quality: 4\"."
            );
            let text = gateway.complete(&ctx, "", &repair)?.reply_text;
            score = parse_rubric_score(&text, &item.scale);
        }
        let Some(score) = score else {
            return Err(JudgeError::Unparseable {
                judge_id: RUBRIC_JUDGE_ID.into(),
                item_id: item.item_id.clone(),
                detail: format!("sample {sample} stayed unreadable after one repair"),
            });
        };
        total += score;
    }
    let score = total / samples as f64;
    Ok(JudgeScore {
        item_id: item.item_id.clone(),
        judge_id: RUBRIC_JUDGE_ID.into(),
        score,
        normalized_score: item.scale.normalized(score),
        feedback: None,
    })
}

/// The two referee roles of the discussion judge, spoken in this order.
const DISCUSSION_ROLES: [(&str, &str); 2] = [
    (
        "General Public",
        "You represent the general public and care about whether the content is useful, \
         clear, and enjoyable for ordinary readers.",
    ),
    (
        "Critic",
        "You are a critic who scrutinizes quality, accuracy, and style with high standards.",
    ),
];

fn role_system(role_name: &str, role_description: &str) -> String {
    format!(
        "You are now {role_name}, one of the referees in this discussion. {role_description} \
         There are other referees assigned the same task; discuss with them, but judge from \
         your own perspective and end every message with your current scores in the required \
         format."
    )
}

/// Two-role discussion judge: the roles alternate for `rounds` rounds, each
/// seeing the discussion so far; each role's final message is parsed for its
/// Assistant-1 score (one repair request when unreadable) and the judge
/// score is the mean of the two roles' scores.
pub fn run_dual_role_judge(
    gateway: &Gateway,
    item: &EvaluationItem,
    rounds: usize,
) -> Result<JudgeScore, JudgeError> {
    if rounds == 0 {
        return Err(JudgeError::ZeroRounds);
    }
    let base = prompts::dual_role_judge_user(
        &item.content_kind,
        &item.context_kind,
        &item.task_description,
        &item.context,
        &item.content,
    );
    let ctx = CallContext::new(
        Stage::Baseline,
        format!("{}/{}", DUAL_ROLE_JUDGE_ID, item.item_id),
    );

    let mut log: Vec<(usize, String)> = Vec::new();
    for _ in 0..rounds {
        for (role_index, (role_name, role_description)) in DISCUSSION_ROLES.iter().enumerate() {
            let system = role_system(role_name, role_description);
            let user = if log.is_empty() {
                base.clone()
            } else {
                let rendered = log
                    .iter()
                    .map(|(i, text)| prompts::history_line(DISCUSSION_ROLES[*i].0, text))
                    .collect::<Vec<_>>()
                    .join("\n");
                format!(
                    "{base}\n\n[Discussion so far]\n{rendered}\n\nIt is now your turn to speak \
                     as {role_name}. React to the other referee where useful and keep the \
                     required output format."
                )
            };
            let text = gateway.complete(&ctx, &system, &user)?.reply_text;
            log.push((role_index, text));
        }
    }

    let mut role_scores = Vec::new();
    for (role_index, (role_name, role_description)) in DISCUSSION_ROLES.iter().enumerate() {
        let final_text = log
            .iter()
            .rev()
            .find(|(i, _)| *i == role_index)
            .map(|(_, text)| text.clone())
            .expect("every role spoke at least once");
        let mut score = parse_first_assistant_score(&final_text, &item.scale);
        if score.is_none() {
            log::warn!(
                "{}/{}: {role_name} gave no readable final score; requesting a restatement",
                DUAL_ROLE_JUDGE_ID,
                item.item_id
            );
            let system = role_system(role_name, role_description);
            let repair = format!(
                "{base}\n\nYou previously replied:\n{final_text}\n\nRestate your final scores \
                 strictly in the format:\nThe score of Assistant one: <score>\nThe score of \
                 Assistant two: <score>"
            );
            let text = gateway.complete(&ctx, &system, &repair)?.reply_text;
            score = parse_first_assistant_score(&text, &item.scale);
        }
        let Some(score) = score else {
            return Err(JudgeError::Unparseable {
                judge_id: DUAL_ROLE_JUDGE_ID.into(),
                item_id: item.item_id.clone(),
                detail: format!("{role_name} stayed unreadable after one repair"),
            });
        };
        role_scores.push(score);
    }

    let score = role_scores.iter().sum::<f64>() / role_scores.len() as f64;
    Ok(JudgeScore {
        item_id: item.item_id.clone(),
        judge_id: DUAL_ROLE_JUDGE_ID.into(),
        score,
        normalized_score: item.scale.normalized(score),
        feedback: None,
    })
}

/// One minimal role-played agent per stakeholder group; the debate engine
/// runs on these exactly as on full personas.
pub fn simple_role_groups(
    groups: &[StakeholderGroup],
    templates: &RoleTemplates,
) -> Vec<GroupAgents> {
    groups
        .iter()
        .map(|group| GroupAgents {
            group_name: group.group_name.clone(),
            agents: vec![build_simple_role(group, templates)],
        })
        .collect()
}

/// Model-free judge: longest-common-subsequence F1 between the content and
/// its reference context, already on the [0, 1] scale.
pub fn run_reference_overlap_judge(item: &EvaluationItem) -> Result<JudgeScore, JudgeError> {
    let score = metrics::rouge_l_f1(&item.content, &item.context).map_err(|source| {
        JudgeError::Overlap {
            item_id: item.item_id.clone(),
            source,
        }
    })?;
    Ok(JudgeScore {
        item_id: item.item_id.clone(),
        judge_id: REFERENCE_OVERLAP_JUDGE_ID.into(),
        score,
        normalized_score: score,
        feedback: None,
    })
}
