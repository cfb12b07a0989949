//! Document loading and prompt-sized chunking.
//!
//! Chunking splits on paragraph boundaries (runs of blank lines) and packs
//! consecutive paragraphs greedily under a token budget; a paragraph that
//! alone exceeds the budget is split on sentence boundaries, and a sentence
//! that still exceeds the budget is split at whitespace. Every chunk is an
//! exact byte slice of the document body — separators stay attached to the
//! text that precedes them — so concatenating the chunks in index order
//! reproduces the body byte for byte.
//!
//! Token counts use the whitespace-delimited approximation shared with the
//! gateway's cost accounting ([`crate::gateway::approx_token_count`]).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Same whitespace token approximation the gateway uses for cost
/// accounting, as a width suitable for indexing and budget math.
fn approx_token_count(text: &str) -> usize {
    crate::gateway::approx_token_count(text) as usize
}

/// Smallest chunk budget the splitter accepts; below this, prompts would
/// fragment mid-thought.
pub const MIN_CHUNK_BUDGET: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    Utf8 { path: PathBuf },
    #[error("{path} is empty")]
    EmptyDocument { path: PathBuf },
    #[error("chunk budget {budget} is below the minimum of {MIN_CHUNK_BUDGET}")]
    BudgetTooSmall { budget: usize },
    #[error("corpus manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("duplicate document id {doc_id:?} in corpus")]
    DuplicateDocId { doc_id: String },
}

/// One source document with a normalized body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    /// Unique within a run; derived from the file stem.
    pub doc_id: String,
    pub title: String,
    /// Document text with line endings normalized to LF; never empty.
    pub body: String,
    pub source_path: PathBuf,
}

/// A contiguous slice of one document's body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub approx_token_count: usize,
}

/// One manifest row: where a document lives and what to call it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

/// Reads one document, normalizes line endings, and rejects empty files.
pub fn load_document(path: &Path, title: Option<&str>) -> Result<Document, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw = String::from_utf8(bytes).map_err(|_| CorpusError::Utf8 {
        path: path.to_path_buf(),
    })?;
    let body = raw.replace("\r\n", "\n").replace('\r', "\n");
    if body.trim().is_empty() {
        return Err(CorpusError::EmptyDocument {
            path: path.to_path_buf(),
        });
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "document".to_string());
    Ok(Document {
        doc_id: stem.clone(),
        title: title.map(str::to_string).unwrap_or(stem),
        body,
        source_path: path.to_path_buf(),
    })
}

/// Loads every document named by a JSON manifest (a list of `{path, title}`
/// rows; paths are resolved relative to the manifest's directory).
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<Document>, CorpusError> {
    let bytes = fs::read(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_slice(&bytes).map_err(|e| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    if entries.is_empty() {
        return Err(CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: "manifest lists no documents".into(),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut documents = Vec::with_capacity(entries.len());
    let mut seen = std::collections::BTreeSet::new();
    for entry in entries {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let document = load_document(&path, entry.title.as_deref())?;
        if !seen.insert(document.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                doc_id: document.doc_id,
            });
        }
        documents.push(document);
    }
    Ok(documents)
}

/// Byte ranges of paragraph segments; each segment keeps its trailing
/// blank-line run, so the segments exactly tile the body.
fn paragraph_segments(body: &str) -> Vec<(usize, usize)> {
    let bytes = body.as_bytes();
    let mut segments = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\n' {
            let run_start = i;
            while i < bytes.len() && bytes[i] == b'\n' {
                i += 1;
            }
            if i - run_start >= 2 {
                segments.push((start, i));
                start = i;
            }
        } else {
            i += 1;
        }
    }
    if start < bytes.len() {
        segments.push((start, bytes.len()));
    }
    segments
}

/// Byte ranges of sentences within `range`, splitting right after a run of
/// `.`/`!`/`?` that is followed by whitespace. The whitespace opens the next
/// sentence, so the ranges exactly tile the input range.
fn sentence_segments(body: &str, range: (usize, usize)) -> Vec<(usize, usize)> {
    let bytes = body.as_bytes();
    let (lo, hi) = range;
    let mut segments = Vec::new();
    let mut start = lo;
    let mut i = lo;
    while i < hi {
        if matches!(bytes[i], b'.' | b'!' | b'?') {
            while i < hi && matches!(bytes[i], b'.' | b'!' | b'?') {
                i += 1;
            }
            if i < hi && bytes[i].is_ascii_whitespace() {
                segments.push((start, i));
                start = i;
            }
        } else {
            i += 1;
        }
    }
    if start < hi {
        segments.push((start, hi));
    }
    segments
}

/// Byte ranges within `range` that each hold at most `budget` whitespace
/// tokens, splitting only between tokens. Inter-token whitespace stays with
/// the piece that precedes it.
fn token_capped_segments(body: &str, range: (usize, usize), budget: usize) -> Vec<(usize, usize)> {
    let bytes = body.as_bytes();
    let (lo, hi) = range;
    let mut segments = Vec::new();
    let mut start = lo;
    let mut tokens_in_piece = 0;
    let mut i = lo;
    while i < hi {
        // skip whitespace
        while i < hi && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= hi {
            break;
        }
        if tokens_in_piece == budget {
            segments.push((start, i));
            start = i;
            tokens_in_piece = 0;
        }
        // consume one token
        while i < hi && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        tokens_in_piece += 1;
    }
    if start < hi {
        segments.push((start, hi));
    }
    segments
}

/// Splits a document into chunks of at most `budget` approximate tokens.
/// See the module docs for the splitting rules.
pub fn chunk_document(doc: &Document, budget: usize) -> Result<Vec<DocumentChunk>, CorpusError> {
    if budget < MIN_CHUNK_BUDGET {
        return Err(CorpusError::BudgetTooSmall { budget });
    }
    // Flatten the body into ordered units that each fit the budget.
    let mut units: Vec<(usize, usize)> = Vec::new();
    for paragraph in paragraph_segments(&doc.body) {
        if approx_token_count(&doc.body[paragraph.0..paragraph.1]) <= budget {
            units.push(paragraph);
            continue;
        }
        for sentence in sentence_segments(&doc.body, paragraph) {
            if approx_token_count(&doc.body[sentence.0..sentence.1]) <= budget {
                units.push(sentence);
            } else {
                units.extend(token_capped_segments(&doc.body, sentence, budget));
            }
        }
    }

    // Greedy packing of consecutive units. Units split at whitespace, so a
    // chunk's token count is the sum of its units' counts.
    let mut chunks = Vec::new();
    let mut chunk_start: Option<usize> = None;
    let mut chunk_end = 0;
    let mut chunk_tokens = 0;
    for (lo, hi) in units {
        let unit_tokens = approx_token_count(&doc.body[lo..hi]);
        match chunk_start {
            Some(start) if chunk_tokens + unit_tokens <= budget => {
                let _ = start;
                chunk_end = hi;
                chunk_tokens += unit_tokens;
            }
            Some(start) => {
                chunks.push((start, chunk_end));
                chunk_start = Some(lo);
                chunk_end = hi;
                chunk_tokens = unit_tokens;
            }
            None => {
                chunk_start = Some(lo);
                chunk_end = hi;
                chunk_tokens = unit_tokens;
            }
        }
    }
    if let Some(start) = chunk_start {
        chunks.push((start, chunk_end));
    }

    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(chunk_index, (lo, hi))| {
            let text = doc.body[lo..hi].to_string();
            let approx_token_count = approx_token_count(&text);
            DocumentChunk {
                doc_id: doc.doc_id.clone(),
                chunk_index,
                text,
                approx_token_count,
            }
        })
        .collect())
}
