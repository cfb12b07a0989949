//! Persona construction for stakeholder groups.
//!
//! For each stakeholder group one model call turns its consolidated
//! dimensions into personas — exactly one persona per dimension, each with
//! five descriptive attributes. A persona keeps a provenance link to the
//! dimension (and so to the document evidence) it embodies.
//!
//! The simple-role variant skips the model entirely: one agent per group
//! whose attributes all come from a small editable role-template table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{CallContext, Gateway, GatewayError, SchemaDescriptor, Stage};
use crate::perspectives::{DimensionEvidence, StakeholderGroup};
use crate::prompts;

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("persona construction failed for group {group:?}, dimension {dimension:?}: {reason}")]
    Construction {
        group: String,
        dimension: String,
        reason: String,
    },
    #[error("persona cap must be at least 1")]
    ZeroCap,
    #[error("cannot read or write {path}: {message}")]
    Persistence { path: String, message: String },
}

/// One debate participant: five descriptive attributes plus the evaluative
/// dimension it is responsible for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub persona_name: String,
    pub group_name: String,
    pub demographic_info: String,
    pub evaluative_dimension: String,
    pub specialty: String,
    pub psychological_traits: String,
    pub social_relationships: String,
    /// The consolidated dimension this persona was built from.
    pub provenance: DimensionEvidence,
}

const ATTRIBUTE_KEYS: [&str; 6] = [
    "Name",
    "Demographic Information",
    "Perspective",
    "Specialty",
    "Psychological Traits",
    "Social Relationships",
];

fn render_group_perspectives(group: &StakeholderGroup, dims: &[DimensionEvidence]) -> String {
    let mut out = format!(
        "Stakeholder group: {}\nWho they are: {}\nPerspectives to embody (one persona per perspective, in this order):\n",
        group.group_name, group.merged_characteristics
    );
    for (i, dim) in dims.iter().enumerate() {
        out.push_str(&format!(
            "{}. {} (evidence: {})\n",
            i + 1,
            dim.dimension,
            dim.evidence
        ));
    }
    out.trim_end().to_string()
}

/// Pulls the persona array out of the reply object: the key matching the
/// group name, or the sole key when there is exactly one.
fn persona_array<'v>(reply: &'v Value, group_name: &str) -> Result<&'v Vec<Value>, String> {
    let map = reply
        .as_object()
        .ok_or_else(|| "reply is not a JSON object".to_string())?;
    let entry = map
        .get(group_name)
        .or_else(|| if map.len() == 1 { map.values().next() } else { None })
        .ok_or_else(|| format!("reply has no entry for group {group_name:?}"))?;
    entry
        .as_array()
        .ok_or_else(|| format!("entry for group {group_name:?} is not an array"))
}

fn parse_personas(
    reply: &Value,
    group: &StakeholderGroup,
    dims: &[DimensionEvidence],
) -> Result<Vec<Persona>, String> {
    let array = persona_array(reply, &group.group_name)?;
    if array.len() != dims.len() {
        return Err(format!(
            "expected {} personas (one per perspective), got {}",
            dims.len(),
            array.len()
        ));
    }
    let mut personas = Vec::new();
    let mut seen_names = BTreeSet::new();
    for (entry, dim) in array.iter().zip(dims) {
        let mut fields = BTreeMap::new();
        for key in ATTRIBUTE_KEYS {
            let text = entry
                .get(key)
                .and_then(Value::as_str)
                .map(str::trim)
                .unwrap_or_default();
            if text.is_empty() {
                return Err(format!(
                    "persona for perspective {:?} is missing {key:?}",
                    dim.dimension
                ));
            }
            fields.insert(key, text.to_string());
        }
        let name = fields["Name"].clone();
        if !seen_names.insert(name.clone()) {
            return Err(format!("persona name {name:?} is used twice"));
        }
        personas.push(Persona {
            persona_name: name,
            group_name: group.group_name.clone(),
            demographic_info: fields["Demographic Information"].clone(),
            evaluative_dimension: fields["Perspective"].clone(),
            specialty: fields["Specialty"].clone(),
            psychological_traits: fields["Psychological Traits"].clone(),
            social_relationships: fields["Social Relationships"].clone(),
            provenance: dim.clone(),
        });
    }
    Ok(personas)
}

/// Builds the personas for one group: one structured call, one repair round
/// on an invalid roster, then an error naming the offending dimension.
/// `max_personas` caps how many consolidated dimensions are used (in order).
pub fn build_personas(
    gateway: &Gateway,
    task_description: &str,
    group: &StakeholderGroup,
    max_personas: Option<usize>,
) -> Result<Vec<Persona>, PersonaError> {
    if max_personas == Some(0) {
        return Err(PersonaError::ZeroCap);
    }
    let cap = max_personas.unwrap_or(usize::MAX);
    let dims: Vec<DimensionEvidence> = group
        .consolidated_dimensions
        .iter()
        .take(cap)
        .cloned()
        .collect();

    let ctx = CallContext::new(Stage::Personas, group.group_name.clone());
    let user = prompts::persona_user(task_description, &render_group_perspectives(group, &dims));
    let schema = SchemaDescriptor::Object;

    let reply = gateway.complete_structured(&ctx, "", &user, &schema)?;
    let first_reason = match parse_personas(&reply, group, &dims) {
        Ok(personas) => return Ok(personas),
        Err(reason) => reason,
    };
    log::warn!(
        "persona roster for {:?} invalid ({first_reason}); asking for a corrected roster",
        group.group_name
    );
    let repair_user = format!(
        "{user}\n\nYour previous roster was invalid: {first_reason}. Produce exactly {} personas, \
         one per listed perspective in order, each with all of: {}. Values must be non-empty \
         strings and persona names must be distinct.",
        dims.len(),
        ATTRIBUTE_KEYS.join(", ")
    );
    let reply = gateway.complete_structured(&ctx, "", &repair_user, &schema)?;
    parse_personas(&reply, group, &dims).map_err(|reason| {
        let dimension = dims
            .first()
            .map(|d| d.dimension.clone())
            .unwrap_or_default();
        PersonaError::Construction {
            group: group.group_name.clone(),
            dimension,
            reason,
        }
    })
}

/// Role-template table for the simple-role variant: group name to a single
/// first-person role line.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RoleTemplates(pub BTreeMap<String, String>);

impl RoleTemplates {
    /// Built-in lines for common groups; extend or override via a JSON file.
    pub fn builtin() -> Self {
        let mut map = BTreeMap::new();
        map.insert(
            "Teachers".to_string(),
            "You are a preschool teacher who often reads books to your students.".to_string(),
        );
        RoleTemplates(map)
    }

    pub fn from_file(path: &Path) -> Result<Self, PersonaError> {
        let bytes = std::fs::read(path).map_err(|e| PersonaError::Persistence {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let map: BTreeMap<String, String> =
            serde_json::from_slice(&bytes).map_err(|e| PersonaError::Persistence {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let mut merged = Self::builtin().0;
        merged.extend(map);
        Ok(RoleTemplates(merged))
    }

    fn line_for(&self, group_name: &str) -> String {
        self.0
            .get(group_name)
            .cloned()
            .unwrap_or_else(|| format!("You are a {group_name}."))
    }
}

/// Builds the single minimal agent for a group: no model call, all five
/// attributes filled from the role line (or the `You are a {group}.`
/// fallback when the table has no entry).
pub fn build_simple_role(group: &StakeholderGroup, templates: &RoleTemplates) -> Persona {
    let line = templates.line_for(&group.group_name);
    let fallback = format!("You are a {}.", group.group_name);
    Persona {
        persona_name: group.group_name.clone(),
        group_name: group.group_name.clone(),
        demographic_info: fallback,
        evaluative_dimension: line.clone(),
        specialty: line.clone(),
        psychological_traits: line.clone(),
        social_relationships: line,
        provenance: DimensionEvidence {
            dimension: group.group_name.clone(),
            evidence: "role-template table".to_string(),
            doc_id: "simple-role".to_string(),
        },
    }
}

/// Writes personas keyed by group name (the `personas.json` artifact).
pub fn save_personas(
    path: &Path,
    by_group: &BTreeMap<String, Vec<Persona>>,
) -> Result<(), PersonaError> {
    let json = serde_json::to_string_pretty(by_group).expect("personas serialize");
    crate::pipeline::write_atomic(path, json.as_bytes()).map_err(|e| PersonaError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads personas back from `personas.json`.
pub fn load_personas(path: &Path) -> Result<BTreeMap<String, Vec<Persona>>, PersonaError> {
    let bytes = std::fs::read(path).map_err(|e| PersonaError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| PersonaError::Persistence {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
