//! Loading adapter/checkpoint dumps and building quantized collections.
//!
//! Input is a JSON array of objects:
//!
//! ```json
//! [{"id": "samurai-armor", "type": "lora", "base_model": "sd15",
//!   "name": "Samurai Armor", "prompts": ["samurai warrior wearing ..."],
//!   "description": "long free text", "nsfw": false}]
//! ```
//!
//! The first prompt is the exemplar. Entries without one, or that do not
//! match the schema, are skipped and counted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::index::{save_snapshot, Collection, DocKind, DocumentRecord, IndexError};
use crate::llm::{Gateway, LlmError, TokenLedger};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    UnreadableFile { path: String, message: String },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("record `{0}` has no description")]
    MissingMetadata(String),
    #[error("no records to ingest")]
    EmptyInput,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] LlmError),
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    base_model: Option<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    prompts: Vec<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    nsfw: bool,
}

/// A parsed record plus the free-text description kept for the baseline mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEntry {
    pub record: DocumentRecord,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<SourceEntry>,
    pub skipped: usize,
}

impl Dataset {
    pub fn records(&self) -> Vec<DocumentRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }

    pub fn of_kind(&self, kind: DocKind) -> Vec<SourceEntry> {
        self.entries
            .iter()
            .filter(|e| e.record.kind == kind)
            .cloned()
            .collect()
    }
}

fn convert(value: serde_json::Value) -> Result<SourceEntry, String> {
    let raw: RawEntry = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let kind: DocKind = raw.kind.parse()?;
    let exemplar = raw
        .prompts
        .into_iter()
        .find(|p| !p.trim().is_empty())
        .ok_or_else(|| format!("`{}` has no exemplar prompt", raw.id))?;
    let mut record = DocumentRecord::new(raw.id.clone(), kind, exemplar.trim())
        .map_err(|e| e.to_string())?
        .with_display_name(raw.name.unwrap_or_else(|| raw.id.clone()))
        .with_base_model(raw.base_model.unwrap_or_default());
    if raw.nsfw {
        record = record.with_flag("nsfw");
    }
    Ok(SourceEntry {
        record,
        description: raw.description.filter(|d| !d.trim().is_empty()),
    })
}

pub fn parse_dataset(text: &str) -> Result<Dataset, IngestError> {
    if text.trim().is_empty() {
        return Err(IngestError::SchemaError("file is empty".into()));
    }
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::SchemaError(e.to_string()))?;
    let serde_json::Value::Array(items) = value else {
        return Err(IngestError::SchemaError("top level must be a JSON array".into()));
    };
    let mut entries = Vec::with_capacity(items.len());
    let mut skipped = 0;
    for (i, item) in items.into_iter().enumerate() {
        match convert(item) {
            Ok(entry) => entries.push(entry),
            Err(reason) => {
                warn!(index = i, %reason, "skipping entry");
                skipped += 1;
            }
        }
    }
    Ok(Dataset { entries, skipped })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Texts per embedding call.
    pub batch_size: usize,
    /// Embedding calls in flight at once.
    pub parallelism: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            parallelism: 4,
        }
    }
}

fn build_from_texts(
    name: &str,
    records: Vec<DocumentRecord>,
    texts: Vec<String>,
    gateway: &Gateway,
    ledger: &TokenLedger,
    opts: IngestOptions,
) -> Result<Collection<f32>, IngestError> {
    let Some(first) = records.first() else {
        return Err(IngestError::EmptyInput);
    };
    let kind = first.kind;
    let batches: Vec<&[String]> = texts.chunks(opts.batch_size.max(1)).collect();
    let mut embeddings = Vec::with_capacity(texts.len());
    for wave in batches.chunks(opts.parallelism.max(1)) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| s.spawn(move || gateway.embed(batch, ledger)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        });
        for r in results {
            embeddings.extend(r?);
        }
    }
    let dimension = embeddings[0].dimension();
    let mut builder = Collection::builder(name, kind, dimension);
    for (record, embedding) in records.into_iter().zip(&embeddings) {
        builder.add_embedding(record, embedding)?;
    }
    Ok(builder.build()?)
}

/// One embedding per record, computed from its exemplar prompt.
pub fn build_collection(
    name: &str,
    records: &[DocumentRecord],
    gateway: &Gateway,
    ledger: &TokenLedger,
    opts: IngestOptions,
) -> Result<Collection<f32>, IngestError> {
    let texts = records.iter().map(|r| r.exemplar_prompt.clone()).collect();
    build_from_texts(name, records.to_vec(), texts, gateway, ledger, opts)
}

/// Baseline that embeds title plus description instead of the exemplar.
/// Only useful for comparing token cost.
pub fn build_metadata_baseline(
    name: &str,
    entries: &[SourceEntry],
    gateway: &Gateway,
    ledger: &TokenLedger,
    opts: IngestOptions,
) -> Result<Collection<f32>, IngestError> {
    let texts = entries
        .iter()
        .map(|e| {
            let description = e
                .description
                .as_deref()
                .ok_or_else(|| IngestError::MissingMetadata(e.record.id.clone()))?;
            Ok(metadata_text(&e.record.display_name, description))
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let records = entries.iter().map(|e| e.record.clone()).collect();
    build_from_texts(name, records, texts, gateway, ledger, opts)
}

pub fn metadata_text(title: &str, description: &str) -> String {
    format!("{title}. {description}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub collection: String,
    pub kind: DocKind,
    pub documents: usize,
    /// Malformed entries and entries without an exemplar.
    pub skipped: usize,
    pub embedding_tokens: u64,
    pub snapshot: PathBuf,
}

/// Load `input`, embed the entries of `kind` and write the snapshot to `out`.
pub fn ingest_file(
    input: &Path,
    kind: DocKind,
    name: &str,
    out: &Path,
    gateway: &Gateway,
    metadata_baseline: bool,
    opts: IngestOptions,
) -> Result<IngestReport, IngestError> {
    let dataset = load_dataset(input)?;
    let entries = dataset.of_kind(kind);
    let ledger = TokenLedger::unlimited();
    let collection = if metadata_baseline {
        build_metadata_baseline(name, &entries, gateway, &ledger, opts)?
    } else {
        let records: Vec<_> = entries.into_iter().map(|e| e.record).collect();
        build_collection(name, &records, gateway, &ledger, opts)?
    };
    save_snapshot(&collection, out)?;
    Ok(IngestReport {
        collection: name.to_string(),
        kind,
        documents: collection.len(),
        skipped: dataset.skipped,
        embedding_tokens: ledger.embedding_tokens(),
        snapshot: out.to_path_buf(),
    })
}
