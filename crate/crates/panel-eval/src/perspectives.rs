//! Stakeholder extraction and cross-document consolidation.
//!
//! Each document chunk is mined for stakeholders — who they are, and which
//! evaluative dimensions (perspectives with supporting evidence) they bring
//! to the task. Records from all documents are then consolidated in a single
//! call that assigns every record to exactly one stakeholder group and picks
//! which dimensions to keep. Kept dimensions are chosen *by reference*, so a
//! consolidated dimension is always one of the extracted dimensions verbatim
//! and its evidence and source document travel with it.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{chunk_document, CorpusError, Document};
use crate::gateway::{CallContext, Gateway, GatewayError, SchemaDescriptor, Stage, ValueKind};
use crate::prompts;

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no chunk of document {doc_id:?} yielded usable stakeholders")]
    AllChunksFailed { doc_id: String },
}

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no stakeholder records to consolidate")]
    EmptyInput,
    #[error("consolidation reply invalid after repair: {reason}")]
    InvalidGrouping { reason: String },
    #[error("cannot read or write {path}: {message}")]
    Persistence { path: String, message: String },
}

/// One evaluative dimension with its supporting evidence and source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionEvidence {
    pub dimension: String,
    pub evidence: String,
    pub doc_id: String,
}

/// One stakeholder as extracted from a single document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeholderRecord {
    pub name: String,
    pub characteristics: String,
    /// Never empty: records with no dimensions are dropped at extraction.
    pub dimensions: Vec<DimensionEvidence>,
    pub doc_id: String,
}

/// A consolidated stakeholder group spanning documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StakeholderGroup {
    pub group_name: String,
    pub merged_characteristics: String,
    /// Distinct dimensions kept for this group; each is one of the member
    /// records' dimensions, evidence included.
    pub consolidated_dimensions: Vec<DimensionEvidence>,
    pub member_records: Vec<StakeholderRecord>,
}

impl StakeholderGroup {
    /// True when every consolidated dimension appears among the member
    /// records' dimensions — the provenance invariant.
    pub fn provenance_intact(&self) -> bool {
        self.consolidated_dimensions.iter().all(|dim| {
            self.member_records
                .iter()
                .any(|record| record.dimensions.contains(dim))
        })
    }
}

fn value_as_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    }
}

/// Parses one chunk's structured reply into records. Records without a name,
/// without characteristics, or without any usable (perspective, evidence)
/// pair are dropped with a warning rather than failing the chunk.
fn parse_chunk_reply(reply: &Value, doc_id: &str) -> Vec<StakeholderRecord> {
    let Some(map) = reply.as_object() else {
        return Vec::new(); // `[]`: nothing found in this chunk
    };
    let mut records = Vec::new();
    for (name, body) in map {
        let name = name.trim();
        if name.is_empty() {
            log::warn!("{doc_id}: dropped stakeholder with empty name");
            continue;
        }
        let characteristics = body
            .get("characteristics")
            .map(value_as_text)
            .unwrap_or_default();
        if characteristics.is_empty() {
            log::warn!("{doc_id}: dropped stakeholder {name:?} without characteristics");
            continue;
        }
        let mut dimensions = Vec::new();
        for perspective in body
            .get("perspectives")
            .and_then(Value::as_array)
            .map(|a| a.as_slice())
            .unwrap_or(&[])
        {
            let dimension = perspective
                .get("perspective")
                .map(value_as_text)
                .unwrap_or_default();
            let evidence = perspective
                .get("evidence")
                .map(value_as_text)
                .unwrap_or_default();
            if dimension.is_empty() || evidence.is_empty() {
                log::warn!("{doc_id}: dropped perspective of {name:?} missing text or evidence");
                continue;
            }
            dimensions.push(DimensionEvidence {
                dimension,
                evidence,
                doc_id: doc_id.to_string(),
            });
        }
        if dimensions.is_empty() {
            log::warn!("{doc_id}: dropped stakeholder {name:?} with no evaluative dimensions");
            continue;
        }
        records.push(StakeholderRecord {
            name: name.to_string(),
            characteristics,
            dimensions,
            doc_id: doc_id.to_string(),
        });
    }
    records
}

/// Merges same-named records within one document: characteristics from the
/// first occurrence, dimensions concatenated with exact duplicates removed.
fn dedup_by_name(records: Vec<StakeholderRecord>) -> Vec<StakeholderRecord> {
    let mut merged: Vec<StakeholderRecord> = Vec::new();
    for record in records {
        if let Some(existing) = merged.iter_mut().find(|r| r.name == record.name) {
            for dim in record.dimensions {
                if !existing.dimensions.contains(&dim) {
                    existing.dimensions.push(dim);
                }
            }
        } else {
            merged.push(record);
        }
    }
    merged
}

/// Extracts stakeholder records from one document, one structured call per
/// chunk. Chunks whose replies stay unusable after repair are skipped with a
/// warning; if every chunk fails, the document fails.
pub fn extract_stakeholders(
    gateway: &Gateway,
    doc: &Document,
    task_description: &str,
    chunk_budget: usize,
) -> Result<Vec<StakeholderRecord>, ExtractError> {
    let chunks = chunk_document(doc, chunk_budget)?;
    let system = prompts::extraction_system(task_description);
    let schema = SchemaDescriptor::ObjectOrEmptyArray;
    let mut records = Vec::new();
    let mut failed_chunks = 0;
    for chunk in &chunks {
        let ctx = CallContext::new(
            Stage::Extraction,
            format!("{}/chunk-{:03}", doc.doc_id, chunk.chunk_index),
        );
        match gateway.complete_structured(&ctx, &system, &chunk.text, &schema) {
            Ok(reply) => records.extend(parse_chunk_reply(&reply, &doc.doc_id)),
            Err(GatewayError::StructuredOutput { message, .. }) => {
                failed_chunks += 1;
                log::warn!(
                    "{}: skipped chunk {} ({message})",
                    doc.doc_id,
                    chunk.chunk_index
                );
            }
            Err(other) => return Err(other.into()),
        }
    }
    if failed_chunks == chunks.len() {
        return Err(ExtractError::AllChunksFailed {
            doc_id: doc.doc_id.clone(),
        });
    }
    Ok(dedup_by_name(records))
}

/// Numbered listing of records and their dimensions for the consolidation
/// prompt; indices are what the reply's `members` / `keep_dimensions` refer
/// back to.
fn render_record_listing(records: &[StakeholderRecord]) -> String {
    let mut out = String::new();
    for (i, record) in records.iter().enumerate() {
        out.push_str(&format!(
            "[{i}] {} — {} (from document {})\n",
            record.name, record.characteristics, record.doc_id
        ));
        for (j, dim) in record.dimensions.iter().enumerate() {
            out.push_str(&format!(
                "    [{i}.{j}] {} :: evidence: {}\n",
                dim.dimension, dim.evidence
            ));
        }
    }
    out.trim_end().to_string()
}

#[derive(Debug, Deserialize)]
struct GroupReply {
    group_name: String,
    #[serde(default)]
    merged_characteristics: String,
    members: Vec<usize>,
    keep_dimensions: Vec<(usize, usize)>,
}

fn parse_groups(
    value: &Value,
    records: &[StakeholderRecord],
) -> Result<Vec<StakeholderGroup>, String> {
    let replies: Vec<GroupReply> =
        serde_json::from_value(value.get("groups").cloned().unwrap_or(Value::Null))
            .map_err(|e| format!("groups list malformed: {e}"))?;
    if replies.is_empty() {
        return Err("groups list is empty".into());
    }

    let mut assigned = BTreeSet::new();
    for reply in &replies {
        if reply.group_name.trim().is_empty() {
            return Err("a group has an empty name".into());
        }
        if reply.members.is_empty() {
            return Err(format!("group {:?} has no members", reply.group_name));
        }
        for &member in &reply.members {
            if member >= records.len() {
                return Err(format!(
                    "group {:?} references unknown record index {member}",
                    reply.group_name
                ));
            }
            if !assigned.insert(member) {
                return Err(format!("record index {member} assigned to two groups"));
            }
        }
        if reply.keep_dimensions.is_empty() {
            return Err(format!("group {:?} keeps no dimensions", reply.group_name));
        }
        for &(r, d) in &reply.keep_dimensions {
            if !reply.members.contains(&r) {
                return Err(format!(
                    "group {:?} keeps a dimension of record {r}, which is not a member",
                    reply.group_name
                ));
            }
            if d >= records[r].dimensions.len() {
                return Err(format!(
                    "group {:?} references unknown dimension index {r}.{d}",
                    reply.group_name
                ));
            }
        }
    }
    if assigned.len() != records.len() {
        let missing: Vec<String> = (0..records.len())
            .filter(|i| !assigned.contains(i))
            .map(|i| i.to_string())
            .collect();
        return Err(format!(
            "assignment is not total; unassigned record indices: {}",
            missing.join(", ")
        ));
    }

    let mut groups = Vec::new();
    for reply in replies {
        let member_records: Vec<StakeholderRecord> = reply
            .members
            .iter()
            .map(|&m| records[m].clone())
            .collect();
        let mut consolidated: Vec<DimensionEvidence> = Vec::new();
        for (r, d) in reply.keep_dimensions {
            let dim = records[r].dimensions[d].clone();
            if consolidated.iter().any(|c| c.dimension == dim.dimension) {
                continue; // identical texts collapse to the first reference
            }
            consolidated.push(dim);
        }
        let merged_characteristics = if reply.merged_characteristics.trim().is_empty() {
            member_records
                .iter()
                .map(|r| r.characteristics.as_str())
                .collect::<Vec<_>>()
                .join("; ")
        } else {
            reply.merged_characteristics.trim().to_string()
        };
        groups.push(StakeholderGroup {
            group_name: reply.group_name.trim().to_string(),
            merged_characteristics,
            consolidated_dimensions: consolidated,
            member_records,
        });
    }
    Ok(groups)
}

/// Consolidates records from all documents into stakeholder groups with one
/// structured call (plus at most one repair round for an invalid
/// assignment). A single record short-circuits to a passthrough group
/// without any call.
pub fn merge_stakeholders(
    gateway: &Gateway,
    task_description: &str,
    records: &[StakeholderRecord],
) -> Result<Vec<StakeholderGroup>, MergeError> {
    if records.is_empty() {
        return Err(MergeError::EmptyInput);
    }
    if records.len() == 1 {
        let record = records[0].clone();
        return Ok(vec![StakeholderGroup {
            group_name: record.name.clone(),
            merged_characteristics: record.characteristics.clone(),
            consolidated_dimensions: record.dimensions.clone(),
            member_records: vec![record],
        }]);
    }

    let ctx = CallContext::new(Stage::Merge, "corpus");
    let user = prompts::merge_user(task_description, &render_record_listing(records));
    let schema = SchemaDescriptor::ObjectRequiring(vec![("groups".into(), ValueKind::Array)]);

    let reply = gateway.complete_structured(&ctx, "", &user, &schema)?;
    let first_reason = match parse_groups(&reply, records) {
        Ok(groups) => return Ok(groups),
        Err(reason) => reason,
    };
    log::warn!("consolidation reply invalid ({first_reason}); asking for a corrected grouping");
    let repair_user = format!(
        "{user}\n\nYour previous grouping was invalid: {first_reason}. \
         Remember: every record index must appear in exactly one group, and every \
         keep_dimensions entry must be a [record, dimension] index pair pointing at \
         one of that group's members."
    );
    let reply = gateway.complete_structured(&ctx, "", &repair_user, &schema)?;
    parse_groups(&reply, records).map_err(|reason| MergeError::InvalidGrouping { reason })
}

/// Writes groups as pretty JSON (the `perspectives.json` artifact).
pub fn save_groups(path: &Path, groups: &[StakeholderGroup]) -> Result<(), MergeError> {
    let json = serde_json::to_string_pretty(groups).expect("groups serialize");
    crate::pipeline::write_atomic(path, json.as_bytes()).map_err(|e| MergeError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads groups back from `perspectives.json`.
pub fn load_groups(path: &Path) -> Result<Vec<StakeholderGroup>, MergeError> {
    let bytes = std::fs::read(path).map_err(|e| MergeError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| MergeError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MatchSpec, ScriptEntry, ScriptedBackend};
    use std::path::PathBuf;
    use std::sync::Arc;

    fn doc(doc_id: &str, body: &str) -> Document {
        Document {
            doc_id: doc_id.into(),
            title: doc_id.into(),
            body: body.into(),
            source_path: PathBuf::from(format!("{doc_id}.md")),
        }
    }

    fn scripted(entries: Vec<ScriptEntry>) -> Gateway {
        Gateway::with_backend(Arc::new(ScriptedBackend::from_entries(entries)))
    }

    fn matching(needle: &str, reply: &str) -> ScriptEntry {
        ScriptEntry {
            key: None,
            match_text: Some(MatchSpec::One(needle.into())),
            reply: reply.into(),
        }
    }

    fn record(name: &str, doc_id: &str, dims: &[(&str, &str)]) -> StakeholderRecord {
        StakeholderRecord {
            name: name.into(),
            characteristics: format!("{name} characteristics"),
            dimensions: dims
                .iter()
                .map(|(dimension, evidence)| DimensionEvidence {
                    dimension: dimension.to_string(),
                    evidence: evidence.to_string(),
                    doc_id: doc_id.to_string(),
                })
                .collect(),
            doc_id: doc_id.into(),
        }
    }

    fn words(n: usize, tag: &str) -> String {
        (0..n)
            .map(|i| format!("{tag}{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn extraction_collects_records_and_skips_empty_chunks() {
        // Two paragraphs that cannot share a 60-token chunk.
        let body = format!("{}\n\n{}", words(55, "alpha"), words(55, "beta"));
        let document = doc("paper", &body);
        let gateway = scripted(vec![
            matching(
                "alpha0",
                r#"{"Teachers": {"characteristics": "reads to children",
                    "perspectives": [
                        {"perspective": "questions must suit young listeners", "evidence": "teachers adapt questions"},
                        {"perspective": "", "evidence": "ignored"}
                    ]},
                   "Ghost": {"characteristics": "no perspectives", "perspectives": []}}"#,
            ),
            matching("beta0", "[]"),
        ]);
        let records = extract_stakeholders(&gateway, &document, "judge QA pairs", 60).unwrap();
        assert_eq!(records.len(), 1, "empty-dimension records must be dropped");
        assert_eq!(records[0].name, "Teachers");
        assert_eq!(records[0].dimensions.len(), 1);
        assert_eq!(records[0].doc_id, "paper");
    }

    #[test]
    fn extraction_merges_same_name_across_chunks_of_one_document() {
        let body = format!("{}\n\n{}", words(55, "one"), words(55, "two"));
        let document = doc("paper", &body);
        let gateway = scripted(vec![
            matching(
                "one0",
                r#"{"Parents": {"characteristics": "caregivers",
                    "perspectives": [{"perspective": "stories should be safe", "evidence": "e1"}]}}"#,
            ),
            matching(
                "two0",
                r#"{"Parents": {"characteristics": "slightly different wording",
                    "perspectives": [{"perspective": "stories should be safe", "evidence": "e1"},
                                      {"perspective": "stories should teach values", "evidence": "e2"}]}}"#,
            ),
        ]);
        let records = extract_stakeholders(&gateway, &document, "judge stories", 60).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].characteristics, "caregivers");
        assert_eq!(records[0].dimensions.len(), 2, "exact duplicates collapse");
    }

    #[test]
    fn extraction_skips_failing_chunks_but_errors_when_all_fail() {
        let body = format!("{}\n\n{}", words(55, "good"), words(55, "bad"));
        let document = doc("paper", &body);
        let gateway = scripted(vec![
            matching(
                "good0",
                r#"{"Critics": {"characteristics": "professional reviewers",
                    "perspectives": [{"perspective": "prose quality matters", "evidence": "e"}]}}"#,
            ),
            matching("bad0", "not json at all"),
        ]);
        let records = extract_stakeholders(&gateway, &document, "judge", 60).unwrap();
        assert_eq!(records.len(), 1);

        let all_bad = scripted(vec![matching("", "still not json")]);
        let err = extract_stakeholders(&all_bad, &document, "judge", 60).unwrap_err();
        assert!(matches!(err, ExtractError::AllChunksFailed { .. }));
    }

    #[test]
    fn merge_passes_single_record_through_without_a_call() {
        // No script entries: any model call would fail loudly.
        let gateway = scripted(vec![]);
        let records = vec![record("Teachers", "d1", &[("dim a", "ev a")])];
        let groups = merge_stakeholders(&gateway, "task", &records).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].group_name, "Teachers");
        assert_eq!(groups[0].consolidated_dimensions, records[0].dimensions);
        assert!(groups[0].provenance_intact());
        assert!(gateway.ledger().is_empty());
    }

    #[test]
    fn merge_groups_records_and_keeps_referenced_dimensions() {
        let records = vec![
            record("Teachers", "d1", &[("age fit", "ev1"), ("engagement", "ev2")]),
            record("Educators", "d2", &[("age appropriateness", "ev3")]),
            record("Parents", "d2", &[("safety", "ev4")]),
        ];
        let gateway = scripted(vec![matching(
            "Stakeholder Records",
            r#"{"groups": [
                {"group_name": "Teachers", "merged_characteristics": "educators of young children",
                 "members": [0, 1], "keep_dimensions": [[0, 0], [0, 1]]},
                {"group_name": "Parents", "merged_characteristics": "caregivers",
                 "members": [2], "keep_dimensions": [[2, 0]]}
            ]}"#,
        )]);
        let groups = merge_stakeholders(&gateway, "task", &records).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].member_records.len(), 2);
        assert_eq!(groups[0].consolidated_dimensions.len(), 2);
        assert!(groups.iter().all(StakeholderGroup::provenance_intact));
        // every input record appears exactly once across groups
        let total: usize = groups.iter().map(|g| g.member_records.len()).sum();
        assert_eq!(total, records.len());
    }

    #[test]
    fn merge_repairs_an_incomplete_assignment_once() {
        let records = vec![
            record("A", "d1", &[("dim", "ev")]),
            record("B", "d1", &[("dim b", "ev b")]),
        ];
        let gateway = scripted(vec![
            matching(
                "previous grouping was invalid",
                r#"{"groups": [
                    {"group_name": "AB", "merged_characteristics": "both",
                     "members": [0, 1], "keep_dimensions": [[0, 0], [1, 0]]}
                ]}"#,
            ),
            matching(
                "Stakeholder Records",
                r#"{"groups": [
                    {"group_name": "A only", "merged_characteristics": "a",
                     "members": [0], "keep_dimensions": [[0, 0]]}
                ]}"#,
            ),
        ]);
        let groups = merge_stakeholders(&gateway, "task", &records).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].group_name, "AB");
    }

    #[test]
    fn merge_fails_after_two_invalid_groupings() {
        let records = vec![
            record("A", "d1", &[("dim", "ev")]),
            record("B", "d1", &[("dim b", "ev b")]),
        ];
        let gateway = scripted(vec![matching(
            "Stakeholder Records",
            r#"{"groups": [{"group_name": "A only", "merged_characteristics": "a",
                "members": [0], "keep_dimensions": [[0, 0]]}]}"#,
        )]);
        let err = merge_stakeholders(&gateway, "task", &records).unwrap_err();
        match err {
            MergeError::InvalidGrouping { reason } => {
                assert!(reason.contains("unassigned record indices: 1"), "{reason}");
            }
            other => panic!("expected invalid grouping, got {other:?}"),
        }
    }

    #[test]
    fn merge_rejects_dimension_reference_outside_the_group() {
        let records = vec![
            record("A", "d1", &[("dim", "ev")]),
            record("B", "d1", &[("dim b", "ev b")]),
        ];
        let gateway = scripted(vec![matching(
            "Stakeholder Records",
            // keeps a dimension of record 1 inside the group that owns only record 0
            r#"{"groups": [
                {"group_name": "A", "merged_characteristics": "a", "members": [0], "keep_dimensions": [[1, 0]]},
                {"group_name": "B", "merged_characteristics": "b", "members": [1], "keep_dimensions": [[1, 0]]}
            ]}"#,
        )]);
        let err = merge_stakeholders(&gateway, "task", &records).unwrap_err();
        assert!(matches!(err, MergeError::InvalidGrouping { .. }));
    }
}
