//! End-to-end evaluation pipeline with stage-level resumption.
//!
//! A run reads one JSON config (paths resolved relative to the config file)
//! and fills an output directory with artifacts: consolidated stakeholder
//! groups, personas, per-(item, group) debate transcripts, baseline
//! verdicts, a score table, alignment reports against the human ratings,
//! reliability figures, and a cost ledger.
//!
//! Every stage writes a stamp capturing a digest of its inputs (config
//! knobs, upstream artifacts, prompt version, backend fingerprint). On a
//! rerun, a matching stamp lets the stage reuse its artifacts — debate and
//! baseline stages resume per item file — while any input change recomputes
//! the stage and everything downstream of it. All files are written via a
//! temp-file-and-rename so interrupted runs never leave half-written
//! artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    self, JudgeError, DUAL_ROLE_JUDGE_ID, PANEL_JUDGE_ID, REFERENCE_OVERLAP_JUDGE_ID,
    RUBRIC_JUDGE_ID, SIMPLE_ROLE_JUDGE_ID,
};
use crate::corpus::{load_corpus, CorpusError};
use crate::dataset::{Dataset, DatasetError};
use crate::debate::{
    assemble_item_score, run_group_debate, DebateError, EvaluationItem, GroupAgents, GroupDebate,
    JudgeScore,
};
use crate::gateway::{CostEntry, Gateway, GatewayError, ProviderConfig};
use crate::metrics::{build_alignment_report, AlignmentReport, AlphaLevel, MetricError, RatingVector};
use crate::personas::{self, Persona, PersonaError, RoleTemplates};
use crate::perspectives::{self, ExtractError, MergeError, StakeholderGroup};
use crate::prompts;

/// Judges a full run executes, in execution order.
pub const ALL_JUDGES: [&str; 5] = [
    PANEL_JUDGE_ID,
    SIMPLE_ROLE_JUDGE_ID,
    RUBRIC_JUDGE_ID,
    DUAL_ROLE_JUDGE_ID,
    REFERENCE_OVERLAP_JUDGE_ID,
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("run configuration error: {0}")]
    Config(String),
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Debate(#[from] DebateError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("judge {judge_id:?} produced no scores at all")]
    NoScores { judge_id: String },
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Writes `bytes` to `path` atomically: parent directories are created, the
/// content goes to a sibling temp file, and a rename makes it visible.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io_error(path, format!("serialize: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| io_error(path, format!("parse: {e}")))
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Turns an identifier into a safe file stem; a short digest disambiguates
/// ids that differ only in replaced characters.
pub fn file_slug(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if cleaned == id {
        cleaned
    } else {
        let digest = sha256_hex(&[id.as_bytes()]);
        format!("{cleaned}-{}", &digest[..8])
    }
}

fn default_chunk_budget() -> usize {
    400
}

fn default_discussion_rounds() -> usize {
    baselines::DEFAULT_DISCUSSION_ROUNDS
}

fn default_rubric_samples() -> usize {
    1
}

fn default_concurrency() -> usize {
    1
}

/// Balanced-sampling request: `per_group` items from every value of the
/// metadata key `group_key`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSpec {
    pub group_key: String,
    pub per_group: usize,
}

/// The run configuration file. Relative paths are resolved against the
/// directory containing the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub provider: ProviderConfig,
    /// Inline task description; exactly one of this and
    /// `task_description_file` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_description_file: Option<String>,
    pub corpus_manifest: String,
    pub dataset: String,
    #[serde(default = "default_chunk_budget")]
    pub chunk_token_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_personas_per_group: Option<usize>,
    #[serde(default = "default_discussion_rounds")]
    pub discussion_rounds: usize,
    #[serde(default = "default_rubric_samples")]
    pub rubric_samples: usize,
    /// Worker threads for debate jobs. Scheduling never changes any
    /// artifact, so this execution knob is left out of the persisted
    /// config snapshot.
    #[serde(default = "default_concurrency", skip_serializing)]
    pub concurrency_limit: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_templates: Option<String>,
    /// Judges to run; defaults to all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judges: Option<Vec<String>>,
}

impl RunConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.concurrency_limit == 0 {
            return Err(PipelineError::Config("concurrency_limit must be at least 1".into()));
        }
        match (&self.task_description, &self.task_description_file) {
            (Some(_), Some(_)) => Err(PipelineError::Config(
                "set either task_description or task_description_file, not both".into(),
            )),
            (None, None) => Err(PipelineError::Config(
                "set task_description or task_description_file".into(),
            )),
            _ => Ok(()),
        }?;
        if let Some(judges) = &self.judges {
            for judge in judges {
                if !ALL_JUDGES.contains(&judge.as_str()) {
                    return Err(PipelineError::Config(format!(
                        "unknown judge {judge:?}; known judges: {}",
                        ALL_JUDGES.join(", ")
                    )));
                }
            }
        }
        if self.rubric_samples == 0 {
            return Err(PipelineError::Config("rubric_samples must be at least 1".into()));
        }
        if self.discussion_rounds == 0 {
            return Err(PipelineError::Config("discussion_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// One stage's input digest; a stage reuses its artifacts only when the
/// stored stamp equals the freshly computed one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Stamp {
    input_hash: String,
    prompts_version: String,
    backend: String,
}

/// One debate transcript file: the full debate plus the model calls it cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub judge_id: String,
    pub item_id: String,
    pub group_name: String,
    pub debate: GroupDebate,
    pub cost: Vec<CostEntry>,
}

/// One baseline verdict file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineFile {
    pub score: JudgeScore,
    pub cost: Vec<CostEntry>,
}

/// Aggregated cost of a stage or a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub total_calls: usize,
    pub total_tokens: u64,
    /// True when any token count is a whitespace approximation rather than
    /// a provider-reported figure.
    pub approximate: bool,
    pub entries: Vec<CostEntry>,
}

impl CostReport {
    fn from_entries(entries: Vec<CostEntry>) -> Self {
        CostReport {
            total_calls: entries.len(),
            total_tokens: entries.iter().map(CostEntry::total_tokens).sum(),
            approximate: entries.iter().any(|e| e.exchange.approximate),
            entries,
        }
    }
}

/// Price a token total at a per-million-token rate.
pub fn estimated_cost(total_tokens: u64, price_per_million: f64) -> f64 {
    total_tokens as f64 / 1_000_000.0 * price_per_million
}

/// One row of `scores.csv`.
#[derive(Debug, Clone)]
struct ScoreRow {
    item_index: usize,
    item_id: String,
    judge_id: String,
    group_name: String,
    group_score: Option<f64>,
    overall: f64,
    normalized: f64,
}

/// What `run` produced, for human-facing summaries.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub judges: Vec<String>,
    pub items_scored: BTreeMap<String, usize>,
    pub total_calls: usize,
    pub total_tokens: u64,
}

/// Command-line knobs that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub judges: Option<Vec<String>>,
    pub discussion_rounds: Option<usize>,
    pub rubric_samples: Option<usize>,
    pub concurrency_limit: Option<usize>,
}

pub struct Pipeline {
    config: RunConfig,
    out_dir: PathBuf,
    base_dir: PathBuf,
    gateway: Gateway,
    task_description: String,
    dataset: Dataset,
    role_templates: RoleTemplates,
}

impl Pipeline {
    /// Loads and validates the run configuration, resolves paths, loads the
    /// dataset (applying the balanced sample when configured), and builds
    /// the model backend. Credentials are only ever read from the
    /// environment variable named in the provider configuration.
    pub fn new(config_path: &Path, out_dir: &Path) -> Result<Self, PipelineError> {
        Self::with_overrides(config_path, out_dir, Overrides::default())
    }

    /// Like [`Pipeline::new`], with command-line overrides applied before
    /// validation; the config snapshot records the effective values.
    pub fn with_overrides(
        config_path: &Path,
        out_dir: &Path,
        overrides: Overrides,
    ) -> Result<Self, PipelineError> {
        let mut config: RunConfig = read_json(config_path)?;
        if let Some(judges) = overrides.judges {
            config.judges = Some(judges);
        }
        if let Some(rounds) = overrides.discussion_rounds {
            config.discussion_rounds = rounds;
        }
        if let Some(samples) = overrides.rubric_samples {
            config.rubric_samples = samples;
        }
        if let Some(workers) = overrides.concurrency_limit {
            config.concurrency_limit = workers;
        }
        config.validate()?;
        let base_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let task_description = match (&config.task_description, &config.task_description_file) {
            (Some(inline), None) => inline.trim().to_string(),
            (None, Some(file)) => {
                let path = base_dir.join(file);
                std::fs::read_to_string(&path)
                    .map_err(|e| io_error(&path, e))?
                    .trim()
                    .to_string()
            }
            _ => unreachable!("validated"),
        };
        if task_description.is_empty() {
            return Err(PipelineError::Config("task description is empty".into()));
        }

        let mut provider = config.provider.clone();
        if let Some(script) = &provider.script_path {
            provider.script_path = Some(base_dir.join(script));
        }
        let gateway = Gateway::new(&provider)?;

        let mut dataset = Dataset::load(&base_dir.join(&config.dataset))?;
        if let Some(sample) = &config.sample {
            let ids = dataset.sample_balanced(&sample.group_key, sample.per_group, config.seed)?;
            log::info!(
                "balanced sample: kept {} of {} items ({} per {})",
                ids.len(),
                dataset.items.len(),
                sample.per_group,
                sample.group_key
            );
            dataset = dataset.restricted_to(&ids);
        }

        let role_templates = match &config.role_templates {
            Some(file) => RoleTemplates::from_file(&base_dir.join(file))?,
            None => RoleTemplates::builtin(),
        };

        Ok(Pipeline {
            config,
            out_dir: out_dir.to_path_buf(),
            base_dir,
            gateway,
            task_description,
            dataset,
            role_templates,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn stamp(&self, input_hash: String) -> Stamp {
        Stamp {
            input_hash,
            prompts_version: prompts::PROMPTS_VERSION.to_string(),
            backend: self.gateway.backend_fingerprint(),
        }
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.out_dir.join("stamps").join(format!("{stage}.json"))
    }

    fn stamp_matches(&self, stage: &str, stamp: &Stamp) -> bool {
        matches!(read_json::<Stamp>(&self.stamp_path(stage)), Ok(stored) if stored == *stamp)
    }

    fn write_stamp(&self, stage: &str, stamp: &Stamp) -> Result<(), PipelineError> {
        write_json(&self.stamp_path(stage), stamp)
    }

    /// Stakeholder extraction and consolidation; artifact `perspectives.json`.
    pub fn stage_extract(&self) -> Result<Vec<StakeholderGroup>, PipelineError> {
        let corpus_path = self.base_dir.join(&self.config.corpus_manifest);
        let documents = load_corpus(&corpus_path)?;
        let mut parts: Vec<Vec<u8>> = vec![
            self.task_description.clone().into_bytes(),
            self.config.chunk_token_budget.to_string().into_bytes(),
        ];
        for doc in &documents {
            parts.push(doc.doc_id.clone().into_bytes());
            parts.push(doc.body.clone().into_bytes());
        }
        let part_refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        let stamp = self.stamp(sha256_hex(&part_refs));

        let artifact = self.out_dir.join("perspectives.json");
        if self.stamp_matches("extract", &stamp) && artifact.is_file() {
            log::info!("extract: inputs unchanged, reusing {}", artifact.display());
            return Ok(perspectives::load_groups(&artifact)?);
        }

        let gateway = self.gateway.with_fresh_ledger();
        let mut records = Vec::new();
        for doc in &documents {
            records.extend(perspectives::extract_stakeholders(
                &gateway,
                doc,
                &self.task_description,
                self.config.chunk_token_budget,
            )?);
        }
        let groups = perspectives::merge_stakeholders(&gateway, &self.task_description, &records)?;
        perspectives::save_groups(&artifact, &groups)?;
        write_json(
            &self.out_dir.join("costs").join("extract.json"),
            &CostReport::from_entries(gateway.ledger().entries_sorted()),
        )?;
        self.write_stamp("extract", &stamp)?;
        Ok(groups)
    }

    /// Persona construction per stakeholder group; artifact `personas.json`.
    pub fn stage_personas(
        &self,
        groups: &[StakeholderGroup],
    ) -> Result<BTreeMap<String, Vec<Persona>>, PipelineError> {
        let groups_json = serde_json::to_vec(groups).expect("groups serialize");
        let stamp = self.stamp(sha256_hex(&[
            &groups_json,
            format!("{:?}", self.config.max_personas_per_group).as_bytes(),
        ]));
        let artifact = self.out_dir.join("personas.json");
        if self.stamp_matches("personas", &stamp) && artifact.is_file() {
            log::info!("personas: inputs unchanged, reusing {}", artifact.display());
            return Ok(personas::load_personas(&artifact)?);
        }

        let gateway = self.gateway.with_fresh_ledger();
        let mut by_group = BTreeMap::new();
        for group in groups {
            let personas = personas::build_personas(
                &gateway,
                &self.task_description,
                group,
                self.config.max_personas_per_group,
            )?;
            by_group.insert(group.group_name.clone(), personas);
        }
        personas::save_personas(&artifact, &by_group)?;
        write_json(
            &self.out_dir.join("costs").join("personas.json"),
            &CostReport::from_entries(gateway.ledger().entries_sorted()),
        )?;
        self.write_stamp("personas", &stamp)?;
        Ok(by_group)
    }

    fn transcript_path(&self, judge_id: &str, item_id: &str, group_name: &str) -> PathBuf {
        self.out_dir
            .join("transcripts")
            .join(judge_id)
            .join(file_slug(item_id))
            .join(format!("{}.json", file_slug(group_name)))
    }

    /// Runs (or resumes) all debates of one judge over all items and
    /// panels. Returns the transcripts in (item, panel) order.
    fn stage_debates(
        &self,
        judge_id: &str,
        panels: &[GroupAgents],
        items: &[EvaluationItem],
    ) -> Result<Vec<TranscriptFile>, PipelineError> {
        let stamp = self.stamp(sha256_hex(&[
            judge_id.as_bytes(),
            &serde_json::to_vec(panels).expect("panels serialize"),
            &serde_json::to_vec(items).expect("items serialize"),
            format!("{:?}", self.config.max_rounds).as_bytes(),
        ]));
        let stage_name = format!("debates-{judge_id}");
        if !self.stamp_matches(&stage_name, &stamp) {
            let dir = self.out_dir.join("transcripts").join(judge_id);
            if dir.exists() {
                log::info!("{stage_name}: inputs changed, recomputing all transcripts");
                std::fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            }
            self.write_stamp(&stage_name, &stamp)?;
        }

        struct Job<'a> {
            item: &'a EvaluationItem,
            panel: &'a GroupAgents,
            path: PathBuf,
        }
        let mut jobs = Vec::new();
        for item in items {
            for panel in panels {
                let path = self.transcript_path(judge_id, &item.item_id, &panel.group_name);
                if !path.is_file() {
                    jobs.push(Job { item, panel, path });
                }
            }
        }
        log::info!(
            "{stage_name}: {} of {} debates to run",
            jobs.len(),
            items.len() * panels.len()
        );

        let judge_owned = judge_id.to_string();
        let failures = run_parallel(&jobs, self.config.concurrency_limit, |job| {
            let gateway = self.gateway.with_fresh_ledger();
            let unit = format!("{}/{}", job.item.item_id, job.panel.group_name);
            match run_group_debate(
                &gateway,
                &unit,
                job.item,
                &job.panel.group_name,
                &job.panel.agents,
                self.config.max_rounds,
            ) {
                Ok(debate) => {
                    let transcript = TranscriptFile {
                        judge_id: judge_owned.clone(),
                        item_id: job.item.item_id.clone(),
                        group_name: job.panel.group_name.clone(),
                        debate,
                        cost: gateway.ledger().entries_sorted(),
                    };
                    match write_json(&job.path, &transcript) {
                        Ok(()) => None,
                        Err(e) => Some(format!("{unit}: {e}")),
                    }
                }
                Err(e) => {
                    log::warn!("{unit}: group debate failed and is excluded ({e})");
                    None
                }
            }
        });
        if let Some(first) = failures.into_iter().flatten().next() {
            return Err(PipelineError::Config(format!("transcript write failed: {first}")));
        }

        let mut transcripts = Vec::new();
        for item in items {
            for panel in panels {
                let path = self.transcript_path(judge_id, &item.item_id, &panel.group_name);
                if path.is_file() {
                    transcripts.push(read_json::<TranscriptFile>(&path)?);
                }
            }
        }
        Ok(transcripts)
    }

    fn baseline_path(&self, judge_id: &str, item_id: &str) -> PathBuf {
        self.out_dir
            .join("baselines")
            .join(judge_id)
            .join(format!("{}.json", file_slug(item_id)))
    }

    /// Runs (or resumes) one single-verdict baseline judge over all items.
    fn stage_baseline(
        &self,
        judge_id: &str,
        items: &[EvaluationItem],
    ) -> Result<Vec<BaselineFile>, PipelineError> {
        let knobs = match judge_id {
            RUBRIC_JUDGE_ID => format!(
                "criteria={};samples={}",
                self.dataset.criteria_text(),
                self.config.rubric_samples
            ),
            DUAL_ROLE_JUDGE_ID => format!("rounds={}", self.config.discussion_rounds),
            _ => String::new(),
        };
        let fingerprint_relevant = judge_id != REFERENCE_OVERLAP_JUDGE_ID;
        let mut stamp = self.stamp(sha256_hex(&[
            judge_id.as_bytes(),
            &serde_json::to_vec(items).expect("items serialize"),
            knobs.as_bytes(),
        ]));
        if !fingerprint_relevant {
            stamp.backend = String::new();
        }
        let stage_name = format!("baseline-{judge_id}");
        if !self.stamp_matches(&stage_name, &stamp) {
            let dir = self.out_dir.join("baselines").join(judge_id);
            if dir.exists() {
                log::info!("{stage_name}: inputs changed, recomputing all verdicts");
                std::fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            }
            self.write_stamp(&stage_name, &stamp)?;
        }

        let mut verdicts = Vec::new();
        for item in items {
            let path = self.baseline_path(judge_id, &item.item_id);
            if path.is_file() {
                verdicts.push(read_json::<BaselineFile>(&path)?);
                continue;
            }
            let gateway = self.gateway.with_fresh_ledger();
            let outcome = match judge_id {
                RUBRIC_JUDGE_ID => baselines::run_rubric_judge(
                    &gateway,
                    item,
                    &self.dataset.criteria_text(),
                    self.config.rubric_samples,
                ),
                DUAL_ROLE_JUDGE_ID => {
                    baselines::run_dual_role_judge(&gateway, item, self.config.discussion_rounds)
                }
                REFERENCE_OVERLAP_JUDGE_ID => baselines::run_reference_overlap_judge(item),
                other => {
                    return Err(PipelineError::Config(format!(
                        "{other:?} is not a single-verdict baseline"
                    )))
                }
            };
            match outcome {
                Ok(score) => {
                    let file = BaselineFile { score, cost: gateway.ledger().entries_sorted() };
                    write_json(&path, &file)?;
                    verdicts.push(file);
                }
                Err(e) => log::warn!(
                    "{judge_id}/{}: baseline verdict failed and is excluded ({e})",
                    item.item_id
                ),
            }
        }
        Ok(verdicts)
    }

    /// Runs the configured judges end to end and writes every aggregate
    /// artifact (scores, reports, reliability, costs, config snapshot).
    pub fn run(&self) -> Result<RunSummary, PipelineError> {
        let judges: Vec<String> = match &self.config.judges {
            Some(judges) => judges.clone(),
            None => ALL_JUDGES.iter().map(|s| s.to_string()).collect(),
        };
        let items = self.dataset.evaluation_items();
        let item_order: BTreeMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.as_str(), i))
            .collect();

        let needs_panel_inputs = judges
            .iter()
            .any(|j| j == PANEL_JUDGE_ID || j == SIMPLE_ROLE_JUDGE_ID);
        let groups = if needs_panel_inputs { self.stage_extract()? } else { Vec::new() };

        let mut rows: Vec<ScoreRow> = Vec::new();
        let mut cost_entries: Vec<CostEntry> = Vec::new();
        let mut group_vectors: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        let mut alpha_inputs: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> =
            BTreeMap::new();
        let mut reliability: BTreeMap<String, BTreeMap<String, GroupReliability>> = BTreeMap::new();
        let mut items_scored: BTreeMap<String, usize> = BTreeMap::new();

        for judge_id in &judges {
            let judge_rows = match judge_id.as_str() {
                PANEL_JUDGE_ID | SIMPLE_ROLE_JUDGE_ID => {
                    let panels: Vec<GroupAgents> = if judge_id == PANEL_JUDGE_ID {
                        let personas = self.stage_personas(&groups)?;
                        groups
                            .iter()
                            .map(|g| GroupAgents {
                                group_name: g.group_name.clone(),
                                agents: personas.get(&g.group_name).cloned().unwrap_or_default(),
                            })
                            .collect()
                    } else {
                        baselines::simple_role_groups(&groups, &self.role_templates)
                    };
                    let transcripts = self.stage_debates(judge_id, &panels, &items)?;
                    self.debate_rows(
                        judge_id,
                        &items,
                        &item_order,
                        &panels,
                        &transcripts,
                        &mut cost_entries,
                        &mut group_vectors,
                        &mut alpha_inputs,
                        &mut reliability,
                    )?
                }
                _ => {
                    let verdicts = self.stage_baseline(judge_id, &items)?;
                    let mut judge_rows = Vec::new();
                    for file in verdicts {
                        cost_entries.extend(file.cost.clone());
                        let Some(&item_index) = item_order.get(file.score.item_id.as_str()) else {
                            continue;
                        };
                        judge_rows.push(ScoreRow {
                            item_index,
                            item_id: file.score.item_id.clone(),
                            judge_id: judge_id.clone(),
                            group_name: String::new(),
                            group_score: None,
                            overall: file.score.score,
                            normalized: file.score.normalized_score,
                        });
                    }
                    judge_rows
                }
            };
            let scored: BTreeSet<&str> = judge_rows.iter().map(|r| r.item_id.as_str()).collect();
            if scored.is_empty() {
                return Err(PipelineError::NoScores { judge_id: judge_id.clone() });
            }
            items_scored.insert(judge_id.clone(), scored.len());
            rows.extend(judge_rows);
        }

        self.write_scores_csv(&mut rows)?;
        let human_path = self.out_dir.join("human.csv");
        let mut human_bytes = Vec::new();
        self.dataset.write_human_csv(&mut human_bytes)?;
        write_atomic(&human_path, &human_bytes).map_err(|e| io_error(&human_path, e))?;

        self.write_report(&rows, &group_vectors, &alpha_inputs)?;
        write_json(&self.out_dir.join("reliability.json"), &reliability)?;

        // Stage cost files are read back (rather than taken from the stage
        // calls) so resumed runs that skipped a stage still account for it.
        for stage in ["extract", "personas"] {
            let path = self.out_dir.join("costs").join(format!("{stage}.json"));
            if path.is_file() {
                cost_entries.extend(read_json::<CostReport>(&path)?.entries);
            }
        }
        cost_entries.sort_by(|a, b| (a.stage, &a.unit).cmp(&(b.stage, &b.unit)));
        let cost = CostReport::from_entries(cost_entries);
        write_json(&self.out_dir.join("cost.json"), &cost)?;

        write_json(&self.out_dir.join("run-config.json"), &self.config)?;
        write_json(&self.out_dir.join("prompts.json"), &prompts_manifest())?;
        let version_path = self.out_dir.join("version.txt");
        let version_text = format!(
            "{} {}\nprompts {}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            prompts::PROMPTS_VERSION
        );
        write_atomic(&version_path, version_text.as_bytes())
            .map_err(|e| io_error(&version_path, e))?;

        Ok(RunSummary {
            out_dir: self.out_dir.clone(),
            judges,
            items_scored,
            total_calls: cost.total_calls,
            total_tokens: cost.total_tokens,
        })
    }

    /// Turns one debate judge's transcripts into score rows and collects
    /// the per-group vectors, the groups-as-raters rating matrix, and the
    /// agents-as-raters reliability inputs.
    #[allow(clippy::too_many_arguments)]
    fn debate_rows(
        &self,
        judge_id: &str,
        items: &[EvaluationItem],
        item_order: &BTreeMap<&str, usize>,
        panels: &[GroupAgents],
        transcripts: &[TranscriptFile],
        cost_entries: &mut Vec<CostEntry>,
        group_vectors: &mut BTreeMap<String, Vec<(String, f64)>>,
        alpha_inputs: &mut BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
        reliability: &mut BTreeMap<String, BTreeMap<String, GroupReliability>>,
    ) -> Result<Vec<ScoreRow>, PipelineError> {
        let mut by_item: BTreeMap<&str, Vec<&TranscriptFile>> = BTreeMap::new();
        for transcript in transcripts {
            cost_entries.extend(transcript.cost.clone());
            by_item
                .entry(transcript.item_id.as_str())
                .or_default()
                .push(transcript);
        }

        let mut rows = Vec::new();
        for item in items {
            let Some(item_transcripts) = by_item.get(item.item_id.as_str()) else {
                log::warn!(
                    "{judge_id}/{}: no group produced a verdict; item skipped",
                    item.item_id
                );
                continue;
            };
            let verdicts: Vec<_> = item_transcripts
                .iter()
                .map(|t| t.debate.verdict.clone())
                .collect();
            let overall = assemble_item_score(item, judge_id, &verdicts)?;
            let item_index = item_order[item.item_id.as_str()];
            for verdict in &verdicts {
                rows.push(ScoreRow {
                    item_index,
                    item_id: item.item_id.clone(),
                    judge_id: judge_id.to_string(),
                    group_name: verdict.group_name.clone(),
                    group_score: Some(verdict.group_score),
                    overall: overall.score,
                    normalized: overall.normalized_score,
                });
                group_vectors
                    .entry(format!("{judge_id}:{}", verdict.group_name))
                    .or_default()
                    .push((item.item_id.clone(), verdict.group_score));
                alpha_inputs
                    .entry(judge_id.to_string())
                    .or_default()
                    .entry(verdict.group_name.clone())
                    .or_default()
                    .insert(item.item_id.clone(), verdict.group_score);
            }
        }

        let judge_reliability = reliability.entry(judge_id.to_string()).or_default();
        for panel in panels {
            let agent_names: Vec<&str> = panel
                .agents
                .iter()
                .map(|a| a.persona_name.as_str())
                .collect();
            let mut matrix: Vec<Vec<Option<f64>>> = vec![Vec::new(); agent_names.len()];
            for item in items {
                let scores = transcripts.iter().find(|t| {
                    t.item_id == item.item_id && t.group_name == panel.group_name
                });
                for (row, agent) in matrix.iter_mut().zip(&agent_names) {
                    row.push(scores.and_then(|t| {
                        t.debate.verdict.per_agent_scores.get(*agent).copied()
                    }));
                }
            }
            let alpha = if agent_names.len() < 2 {
                None
            } else {
                match crate::metrics::krippendorff_alpha(&matrix, AlphaLevel::Interval) {
                    Ok(alpha) => Some(alpha),
                    Err(e) => {
                        log::warn!(
                            "{judge_id}/{}: agent reliability undefined ({e})",
                            panel.group_name
                        );
                        None
                    }
                }
            };
            judge_reliability.insert(
                panel.group_name.clone(),
                GroupReliability {
                    alpha,
                    raters: agent_names.len(),
                    units: items.len(),
                },
            );
        }
        Ok(rows)
    }

    fn write_scores_csv(&self, rows: &mut Vec<ScoreRow>) -> Result<(), PipelineError> {
        rows.sort_by(|a, b| {
            (a.judge_id.as_str(), a.item_index, a.group_name.as_str()).cmp(&(
                b.judge_id.as_str(),
                b.item_index,
                b.group_name.as_str(),
            ))
        });
        let path = self.out_dir.join("scores.csv");
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["item_id", "judge_id", "group_name", "group_score", "overall", "normalized"])
            .map_err(|e| io_error(&path, e))?;
        for row in rows.iter() {
            writer
                .write_record([
                    row.item_id.as_str(),
                    row.judge_id.as_str(),
                    row.group_name.as_str(),
                    &row.group_score.map(|v| format!("{v}")).unwrap_or_default(),
                    &format!("{}", row.overall),
                    &format!("{}", row.normalized),
                ])
                .map_err(|e| io_error(&path, e))?;
        }
        let bytes = writer.into_inner().map_err(|e| io_error(&path, e))?;
        write_atomic(&path, &bytes).map_err(|e| io_error(&path, e))
    }

    /// Builds alignment reports: one per judge from its overall scores, one
    /// per (judge, group) from that group's scores, with a groups-as-raters
    /// agreement coefficient attached to multi-group judges.
    fn write_report(
        &self,
        rows: &[ScoreRow],
        group_vectors: &BTreeMap<String, Vec<(String, f64)>>,
        alpha_inputs: &BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    ) -> Result<(), PipelineError> {
        let human: Vec<RatingVector> = self
            .dataset
            .human_dimensions()?
            .into_values()
            .collect();

        let mut overall_pairs: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
        let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
        for row in rows {
            if seen.insert((row.judge_id.as_str(), row.item_id.as_str())) {
                overall_pairs
                    .entry(row.judge_id.as_str())
                    .or_default()
                    .push((row.item_id.clone(), row.overall));
            }
        }

        let mut reports: BTreeMap<String, AlignmentReport> = BTreeMap::new();
        for (judge_id, pairs) in overall_pairs {
            let alpha = alpha_inputs.get(judge_id).and_then(|groups| {
                group_rater_alpha(groups, &self.dataset)
            });
            let vector = RatingVector::new(judge_id, pairs)?;
            reports.insert(
                judge_id.to_string(),
                build_alignment_report(judge_id, &vector, &human, alpha),
            );
        }
        for (name, pairs) in group_vectors {
            let vector = RatingVector::new(name.clone(), pairs.clone())?;
            reports.insert(
                name.clone(),
                build_alignment_report(name, &vector, &human, None),
            );
        }
        write_json(&self.out_dir.join("report.json"), &reports)
    }
}

/// Reliability of one group's agents: agreement across items.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReliability {
    /// Agreement coefficient; absent for single-agent groups or when
    /// undefined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub raters: usize,
    pub units: usize,
}

/// Agreement across a judge's stakeholder groups treated as raters (interval
/// level), over the items each group scored. None with fewer than two groups
/// or when the coefficient is undefined.
fn group_rater_alpha(
    groups: &BTreeMap<String, BTreeMap<String, f64>>,
    dataset: &Dataset,
) -> Option<f64> {
    if groups.len() < 2 {
        return None;
    }
    let matrix: Vec<Vec<Option<f64>>> = groups
        .values()
        .map(|scores| {
            dataset
                .items
                .iter()
                .map(|item| scores.get(&item.item_id).copied())
                .collect()
        })
        .collect();
    match crate::metrics::krippendorff_alpha(&matrix, AlphaLevel::Interval) {
        Ok(alpha) => Some(alpha),
        Err(e) => {
            log::warn!("groups-as-raters agreement undefined ({e})");
            None
        }
    }
}

/// Rendered prompt templates and their version, persisted with each run so
/// score artifacts stay interpretable after template changes.
fn prompts_manifest() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("version".to_string(), prompts::PROMPTS_VERSION.to_string()),
        ("finish_marker".to_string(), prompts::FINISH_MARKER.to_string()),
        ("stakeholder_extraction".to_string(), prompts::STAKEHOLDER_EXTRACTION_TEMPLATE.to_string()),
        ("stakeholder_merge".to_string(), prompts::STAKEHOLDER_MERGE_TEMPLATE.to_string()),
        ("persona".to_string(), prompts::PERSONA_TEMPLATE.to_string()),
        ("agent_system".to_string(), prompts::AGENT_SYSTEM_TEMPLATE.to_string()),
        ("phase1".to_string(), prompts::PHASE1_TEMPLATE.to_string()),
        ("phase2".to_string(), prompts::PHASE2_TEMPLATE.to_string()),
        ("aggregator".to_string(), prompts::AGGREGATOR_TEMPLATE.to_string()),
        ("coordinator".to_string(), prompts::COORDINATOR_TEMPLATE.to_string()),
        ("rubric_judge".to_string(), prompts::RUBRIC_JUDGE_TEMPLATE.to_string()),
        ("dual_role_judge".to_string(), prompts::DUAL_ROLE_JUDGE_TEMPLATE.to_string()),
    ])
}

/// Runs `f` over `jobs` with at most `workers` worker threads, returning
/// results in job order regardless of scheduling.
fn run_parallel<J: Sync, R: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> R + Send + Sync,
) -> Vec<R> {
    if jobs.is_empty() {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<R>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let worker_count = workers.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= jobs.len() {
                    break;
                }
                let output = f(&jobs[index]);
                *results[index].lock().expect("result slot") = Some(output);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot").expect("job ran"))
        .collect()
}

/// Re-derives alignment reports from a `scores.csv` and a `human.csv`
/// without touching any model — the offline `correlate` path.
pub fn correlate_files(
    scores_csv: &Path,
    human_csv: &Path,
) -> Result<BTreeMap<String, AlignmentReport>, PipelineError> {
    let mut human_columns: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(human_csv).map_err(|e| io_error(human_csv, e))?;
    for record in reader.deserialize::<HumanCsvRow>() {
        let row = record.map_err(|e| io_error(human_csv, e))?;
        human_columns
            .entry(row.dimension)
            .or_default()
            .push((row.item_id, row.value));
    }
    let human: Vec<RatingVector> = human_columns
        .into_iter()
        .map(|(dimension, pairs)| RatingVector::new(dimension, pairs))
        .collect::<Result<_, _>>()?;

    let mut overall_pairs: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut group_scores: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> =
        BTreeMap::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut reader = csv::Reader::from_path(scores_csv).map_err(|e| io_error(scores_csv, e))?;
    for record in reader.deserialize::<ScoreCsvRow>() {
        let row = record.map_err(|e| io_error(scores_csv, e))?;
        if seen.insert((row.judge_id.clone(), row.item_id.clone())) {
            overall_pairs
                .entry(row.judge_id.clone())
                .or_default()
                .push((row.item_id.clone(), row.overall));
        }
        if let (group, Some(score)) = (&row.group_name, row.group_score) {
            if !group.is_empty() {
                group_scores
                    .entry(row.judge_id.clone())
                    .or_default()
                    .entry(group.clone())
                    .or_default()
                    .insert(row.item_id.clone(), score);
            }
        }
    }

    let mut reports = BTreeMap::new();
    for (judge_id, pairs) in overall_pairs {
        let alpha = group_scores.get(&judge_id).and_then(|groups| {
            if groups.len() < 2 {
                return None;
            }
            let units: BTreeSet<&String> =
                groups.values().flat_map(|m| m.keys()).collect();
            let matrix: Vec<Vec<Option<f64>>> = groups
                .values()
                .map(|m| units.iter().map(|id| m.get(*id).copied()).collect())
                .collect();
            crate::metrics::krippendorff_alpha(&matrix, AlphaLevel::Interval).ok()
        });
        let vector = RatingVector::new(judge_id.clone(), pairs)?;
        reports.insert(
            judge_id.clone(),
            build_alignment_report(&judge_id, &vector, &human, alpha),
        );
    }
    Ok(reports)
}

#[derive(Debug, Deserialize)]
struct HumanCsvRow {
    item_id: String,
    dimension: String,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct ScoreCsvRow {
    item_id: String,
    judge_id: String,
    #[serde(default)]
    group_name: String,
    #[serde(default)]
    group_score: Option<f64>,
    overall: f64,
    #[allow(dead_code)]
    normalized: f64,
}
