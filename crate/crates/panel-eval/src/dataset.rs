//! Evaluation dataset: items to judge plus human ratings to align against.
//!
//! A dataset manifest is one JSON file carrying the task framing (task
//! description, response format, scale), the items (content, optional
//! context, free-form metadata), per-dimension human ratings, and optional
//! codings that map categorical string ratings onto numbers. String ratings
//! without a coding are an error — never coerced silently.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::debate::{EvaluationItem, ScoreScale};
use crate::metrics::{MetricError, RatingVector};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("dataset has no items")]
    Empty,
    #[error("dataset field {field} must not be empty")]
    MissingField { field: String },
    #[error("duplicate item id {item_id:?}")]
    DuplicateItem { item_id: String },
    #[error("human_ratings.{dimension}.{item_id} refers to an unknown item")]
    UnknownItem { dimension: String, item_id: String },
    #[error(
        "human_ratings.{dimension}.{item_id} is the string {value:?} with no entry in \
         rating_codings.{dimension}; add a coding instead of relying on implicit conversion"
    )]
    UncodedRating {
        dimension: String,
        item_id: String,
        value: String,
    },
    #[error("human_ratings.{dimension}.{item_id} is not a number, string, or null")]
    UnusableRating { dimension: String, item_id: String },
    #[error("human_ratings.{dimension}.{item_id} is not finite")]
    NonFiniteRating { dimension: String, item_id: String },
    #[error("item {item_id:?} has no usable metadata value for group key {group_key:?}")]
    MissingGroupKey { item_id: String, group_key: String },
    #[error("group {group:?} has only {have} items, but {need} were requested per group")]
    GroupTooSmall {
        group: String,
        have: usize,
        need: usize,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
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

/// One item: the text to judge, its context, and free-form metadata (any
/// extra manifest fields land in `metadata`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub item_id: String,
    pub content: String,
    #[serde(default)]
    pub context: String,
    #[serde(flatten)]
    pub metadata: BTreeMap<String, Value>,
}

/// The dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub native_scale: ScoreScale,
    pub task_description: String,
    #[serde(default = "default_response_format")]
    pub response_format: String,
    #[serde(default = "default_content_kind")]
    pub content_kind: String,
    #[serde(default = "default_context_kind")]
    pub context_kind: String,
    /// Quality dimensions named for rubric-style judging.
    #[serde(default)]
    pub criteria: Vec<String>,
    pub items: Vec<DatasetItem>,
    /// dimension -> item id -> rating (number, coded string, or null).
    #[serde(default)]
    pub human_ratings: BTreeMap<String, BTreeMap<String, Value>>,
    /// dimension -> categorical label -> numeric value.
    #[serde(default)]
    pub rating_codings: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dataset: Dataset =
            serde_json::from_slice(&bytes).map_err(|e| DatasetError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        dataset.validate()?;
        Ok(dataset)
    }

    /// Checks identifiers, referential integrity of the ratings, and that
    /// every rating decodes to a finite number.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (field, value) in [
            ("dataset_id", &self.dataset_id),
            ("task_description", &self.task_description),
        ] {
            if value.trim().is_empty() {
                return Err(DatasetError::MissingField { field: field.into() });
            }
        }
        if self.items.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if item.item_id.trim().is_empty() {
                return Err(DatasetError::MissingField { field: "items[].item_id".into() });
            }
            if !seen.insert(item.item_id.as_str()) {
                return Err(DatasetError::DuplicateItem { item_id: item.item_id.clone() });
            }
        }
        for (dimension, ratings) in &self.human_ratings {
            for (item_id, value) in ratings {
                if !seen.contains(item_id.as_str()) {
                    return Err(DatasetError::UnknownItem {
                        dimension: dimension.clone(),
                        item_id: item_id.clone(),
                    });
                }
                self.decode_rating(dimension, item_id, value)?;
            }
        }
        Ok(())
    }

    /// Decodes one rating value: numbers pass through, strings go through
    /// the dimension's coding table, null means "missing".
    fn decode_rating(
        &self,
        dimension: &str,
        item_id: &str,
        value: &Value,
    ) -> Result<Option<f64>, DatasetError> {
        let decoded = match value {
            Value::Null => return Ok(None),
            Value::Number(n) => n.as_f64().ok_or(DatasetError::NonFiniteRating {
                dimension: dimension.to_string(),
                item_id: item_id.to_string(),
            })?,
            Value::String(s) => self
                .rating_codings
                .get(dimension)
                .and_then(|codes| codes.get(s))
                .copied()
                .ok_or_else(|| DatasetError::UncodedRating {
                    dimension: dimension.to_string(),
                    item_id: item_id.to_string(),
                    value: s.clone(),
                })?,
            _ => {
                return Err(DatasetError::UnusableRating {
                    dimension: dimension.to_string(),
                    item_id: item_id.to_string(),
                })
            }
        };
        if !decoded.is_finite() {
            return Err(DatasetError::NonFiniteRating {
                dimension: dimension.to_string(),
                item_id: item_id.to_string(),
            });
        }
        Ok(Some(decoded))
    }

    /// Human ratings of one dimension as a rating vector, in item order.
    pub fn human_dimension(&self, dimension: &str) -> Result<RatingVector, DatasetError> {
        let ratings = self.human_ratings.get(dimension).ok_or_else(|| {
            DatasetError::MissingField { field: format!("human_ratings.{dimension}") }
        })?;
        let mut pairs = Vec::new();
        for item in &self.items {
            if let Some(raw) = ratings.get(&item.item_id) {
                if let Some(decoded) = self.decode_rating(dimension, &item.item_id, raw)? {
                    pairs.push((item.item_id.clone(), decoded));
                }
            }
        }
        Ok(RatingVector::new(dimension, pairs)?)
    }

    /// Every human-rating dimension as rating vectors.
    pub fn human_dimensions(&self) -> Result<BTreeMap<String, RatingVector>, DatasetError> {
        self.human_ratings
            .keys()
            .map(|dim| Ok((dim.clone(), self.human_dimension(dim)?)))
            .collect()
    }

    /// The criteria joined for prompt use, defaulting to "overall quality".
    pub fn criteria_text(&self) -> String {
        if self.criteria.is_empty() {
            "overall quality".to_string()
        } else {
            self.criteria.join(", ")
        }
    }

    pub fn item(&self, item_id: &str) -> Option<&DatasetItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Items dressed with the dataset-wide task framing, in dataset order.
    pub fn evaluation_items(&self) -> Vec<EvaluationItem> {
        self.items
            .iter()
            .map(|item| EvaluationItem {
                item_id: item.item_id.clone(),
                content: item.content.clone(),
                context: item.context.clone(),
                task_description: self.task_description.clone(),
                response_format: self.response_format.clone(),
                content_kind: self.content_kind.clone(),
                context_kind: self.context_kind.clone(),
                scale: self.native_scale,
            })
            .collect()
    }

    fn group_label(item: &DatasetItem, group_key: &str) -> Option<String> {
        match item.metadata.get(group_key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(Value::Bool(b)) => Some(b.to_string()),
            _ => None,
        }
    }

    /// Draws `per_group` items from every metadata group, reproducibly for
    /// a given seed. The returned ids keep the original item order.
    pub fn sample_balanced(
        &self,
        group_key: &str,
        per_group: usize,
        seed: u64,
    ) -> Result<Vec<String>, DatasetError> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (index, item) in self.items.iter().enumerate() {
            let label = Self::group_label(item, group_key).ok_or_else(|| {
                DatasetError::MissingGroupKey {
                    item_id: item.item_id.clone(),
                    group_key: group_key.to_string(),
                }
            })?;
            groups.entry(label).or_default().push(index);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = BTreeSet::new();
        for (group, indices) in &groups {
            if indices.len() < per_group {
                return Err(DatasetError::GroupTooSmall {
                    group: group.clone(),
                    have: indices.len(),
                    need: per_group,
                });
            }
            for pick in rand::seq::index::sample(&mut rng, indices.len(), per_group) {
                chosen.insert(indices[pick]);
            }
        }
        Ok(chosen
            .into_iter()
            .map(|i| self.items[i].item_id.clone())
            .collect())
    }

    /// The same dataset restricted to the given item ids (original order);
    /// ratings of excluded items are dropped.
    pub fn restricted_to(&self, item_ids: &[String]) -> Dataset {
        let keep: BTreeSet<&str> = item_ids.iter().map(String::as_str).collect();
        let mut out = self.clone();
        out.items.retain(|item| keep.contains(item.item_id.as_str()));
        for ratings in out.human_ratings.values_mut() {
            ratings.retain(|item_id, _| keep.contains(item_id.as_str()));
        }
        out
    }

    /// Writes the decoded human ratings as CSV with columns
    /// `item_id,dimension,value` — dimensions sorted, items in dataset order.
    pub fn write_human_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut csv_writer = csv::Writer::from_writer(writer);
        csv_writer
            .write_record(["item_id", "dimension", "value"])
            .map_err(csv_error)?;
        for (dimension, ratings) in &self.human_ratings {
            for item in &self.items {
                let Some(raw) = ratings.get(&item.item_id) else { continue };
                let Some(decoded) = self.decode_rating(dimension, &item.item_id, raw)? else {
                    continue;
                };
                csv_writer
                    .write_record([&item.item_id, dimension, &format!("{decoded}")])
                    .map_err(csv_error)?;
            }
        }
        csv_writer.flush().map_err(|e| DatasetError::Write {
            path: "<csv>".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> DatasetError {
    DatasetError::Write { path: "<csv>".into(), message: e.to_string() }
}
