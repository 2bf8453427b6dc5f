//! Embedded vector store over prompt-exemplar documents.
//!
//! Each checkpoint or adapter is represented by one exemplar prompt whose
//! embedding is stored INT8-quantized. Queries are scored with the triplet
//! context function on dequantized vectors and ranked by
//! `(context desc, margin_sum desc, id asc)`.

mod collection;
mod quantize;
mod similarity;
mod snapshot;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collection::{rank_order, Collection, CollectionBuilder, CollectionStats, IndexedDocument, ScoredHit};
pub use quantize::{quantize, quantize_slice, QuantizedVector, CODE_MAX};
pub use similarity::{cosine, triplet_context, TripletScore};
pub use snapshot::{
    decode_snapshot, encode_snapshot, load_snapshot, save_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("component {index} is not finite")]
    NonFiniteInput { index: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("at least one positive query is required")]
    NoPositives,
    #[error("collection is empty")]
    EmptyCollection,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{id}` is a {found} but the collection holds {expected}s")]
    KindMismatch { id: String, expected: DocKind, found: DocKind },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot version {found} is not supported (max {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("snapshot i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Checkpoint,
    Adapter,
}

impl DocKind {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            DocKind::Checkpoint => 0,
            DocKind::Adapter => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DocKind::Checkpoint),
            1 => Some(DocKind::Adapter),
            _ => None,
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocKind::Checkpoint => "checkpoint",
            DocKind::Adapter => "adapter",
        })
    }
}

impl FromStr for DocKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "checkpoint" | "model" => Ok(DocKind::Checkpoint),
            "adapter" | "lora" | "locon" | "lycoris" => Ok(DocKind::Adapter),
            other => Err(format!("unknown document kind `{other}`")),
        }
    }
}

/// A checkpoint or adapter, represented for retrieval by one exemplar prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub kind: DocKind,
    pub base_model: String,
    pub exemplar_prompt: String,
    pub display_name: String,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

impl DocumentRecord {
    pub fn new(
        id: impl Into<String>,
        kind: DocKind,
        exemplar_prompt: impl Into<String>,
    ) -> Result<Self, IndexError> {
        let record = Self {
            id: id.into(),
            kind,
            base_model: String::new(),
            exemplar_prompt: exemplar_prompt.into(),
            display_name: String::new(),
            flags: BTreeSet::new(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_display_name(mut self, name: impl Into<String>) -> Self {
        self.display_name = name.into();
        self
    }

    pub fn with_base_model(mut self, base: impl Into<String>) -> Self {
        self.base_model = base.into();
        self
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.insert(flag.into());
        self
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.id.trim().is_empty() {
            return Err(IndexError::InvalidDocument("empty id".into()));
        }
        if self.exemplar_prompt.trim().is_empty() {
            return Err(IndexError::InvalidDocument(format!("`{}` has no exemplar prompt", self.id)));
        }
        Ok(())
    }
}
