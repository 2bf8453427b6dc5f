//! Checkpoint and adapter selection over scored retrieval hits.
//!
//! A checkpoint must clear the relevancy threshold `omega_c` with a zero
//! hinge penalty, otherwise the best surviving hit is used as a recorded
//! fallback. Adapters are gathered with a threshold-decay loop: while fewer
//! than `k` hits clear the threshold, the threshold is multiplied by `decay`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::ConceptMap;
use crate::embedding::EmbeddingVector;
use crate::index::{Collection, DocKind, DocumentRecord, IndexError, ScoredHit};
use crate::llm::{Gateway, LlmError, TokenLedger};
use crate::scalar::Scalar;

pub const DEFAULT_NEGATIVE_QUERY: &str = "low quality, deformed, disfigured, watermark, text";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatingError {
    #[error("no checkpoint available after guardrails")]
    NoCheckpointAvailable,
    #[error("collection `{name}` holds {found}s, expected {expected}s")]
    WrongKind { name: String, expected: DocKind, found: DocKind },
    #[error("invalid retrieval policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cannot read guardrails: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalPolicy {
    /// Minimum margin sum for a checkpoint to be selected without fallback.
    pub omega_c: f64,
    pub k_adapters: usize,
    pub init_thresh: f64,
    pub decay: f64,
    pub max_decay_iters: u32,
    pub negative_query: String,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        Self {
            omega_c: 0.35,
            k_adapters: 3,
            init_thresh: 0.6,
            decay: 0.95,
            max_decay_iters: 25,
            negative_query: DEFAULT_NEGATIVE_QUERY.into(),
        }
    }
}

impl RetrievalPolicy {
    pub fn validate(&self) -> Result<(), GatingError> {
        let bad = |m: &str| Err(GatingError::InvalidPolicy(m.into()));
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if !(self.init_thresh > 0.0) {
            return bad("init_thresh must be positive");
        }
        if !self.omega_c.is_finite() {
            return bad("omega_c must be finite");
        }
        if self.k_adapters == 0 {
            return bad("k_adapters must be at least 1");
        }
        if self.max_decay_iters == 0 {
            return bad("max_decay_iters must be at least 1");
        }
        if self.negative_query.trim().is_empty() {
            return bad("negative_query is empty");
        }
        Ok(())
    }

    /// Threshold after `m` decays, `init_thresh · decay^m`.
    pub fn threshold_after(&self, decays: u32) -> f64 {
        self.init_thresh * self.decay.powi(decays as i32)
    }
}

/// Manual blacklists and word filters against rogue checkpoints/adapters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Guardrails {
    pub id_blacklist: BTreeSet<String>,
    /// Case-insensitive substrings matched against display name and exemplar prompt.
    pub word_filters: BTreeSet<String>,
}

impl Guardrails {
    /// One entry per line; `id:<id>` lines blacklist ids, other non-empty
    /// lines are filter words. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Self {
        let mut rails = Guardrails::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            match line.strip_prefix("id:") {
                Some(id) if !id.trim().is_empty() => {
                    rails.id_blacklist.insert(id.trim().to_string());
                }
                Some(_) => {}
                None => {
                    rails.word_filters.insert(line.to_lowercase());
                }
            }
        }
        rails
    }

    pub fn load(path: &Path) -> Result<Self, GatingError> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| GatingError::Io(format!("{}: {e}", path.display())))
    }

    pub fn is_empty(&self) -> bool {
        self.id_blacklist.is_empty() && self.word_filters.is_empty()
    }

    /// Union of two rule sets (e.g. config rails plus per-request exclusions).
    pub fn merged(&self, other: &Guardrails) -> Guardrails {
        Guardrails {
            id_blacklist: self.id_blacklist.union(&other.id_blacklist).cloned().collect(),
            word_filters: self
                .word_filters
                .iter()
                .chain(&other.word_filters)
                .map(|w| w.to_lowercase())
                .collect(),
        }
    }

    pub fn allows(&self, record: &DocumentRecord) -> bool {
        if self.id_blacklist.contains(&record.id) {
            return false;
        }
        if self.word_filters.is_empty() {
            return true;
        }
        let haystack = format!("{}\n{}", record.display_name, record.exemplar_prompt).to_lowercase();
        !self
            .word_filters
            .iter()
            .any(|w| !w.is_empty() && haystack.contains(&w.to_lowercase()))
    }
}

pub fn apply_guardrails<T: Scalar>(hits: Vec<ScoredHit<T>>, rails: &Guardrails) -> Vec<ScoredHit<T>> {
    hits.into_iter().filter(|h| rails.allows(&h.record)).collect()
}

/// Positive queries (main concept first, then supports) and the negative query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct QuerySet<T: Scalar> {
    pub positives: Vec<EmbeddingVector<T>>,
    pub negative: EmbeddingVector<T>,
}

/// Query texts in embedding order: one per concept, negative last.
pub fn query_texts(map: &ConceptMap, policy: &RetrievalPolicy) -> Vec<String> {
    map.concepts()
        .map(|c| c.flatten_to_query())
        .chain(std::iter::once(policy.negative_query.clone()))
        .collect()
}

pub fn build_queries(
    map: &ConceptMap,
    gateway: &Gateway,
    policy: &RetrievalPolicy,
    ledger: &TokenLedger,
) -> Result<QuerySet<f32>, GatingError> {
    let mut vectors = gateway.embed(&query_texts(map, policy), ledger)?;
    let negative = vectors.pop().expect("negative query embedded");
    Ok(QuerySet {
        positives: vectors,
        negative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAdapter {
    pub record: DocumentRecord,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointChoice {
    pub record: DocumentRecord,
    pub context: f64,
    pub margin_sum: f64,
    pub threshold_met: bool,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterChoice {
    pub adapters: Vec<WeightedAdapter>,
    pub decays: u32,
    pub final_threshold: f64,
    pub trace: Vec<String>,
}

/// The retrieval outcome handed to workflow assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub checkpoint: DocumentRecord,
    pub adapters: Vec<WeightedAdapter>,
    pub trace: Vec<String>,
}

fn expect_kind<T: Scalar>(col: &Collection<T>, kind: DocKind) -> Result<(), GatingError> {
    if col.kind() != kind {
        return Err(GatingError::WrongKind {
            name: col.name().to_string(),
            expected: kind,
            found: col.kind(),
        });
    }
    Ok(())
}

pub fn select_checkpoint<T: Scalar>(
    col: &Collection<T>,
    queries: &QuerySet<T>,
    policy: &RetrievalPolicy,
    rails: &Guardrails,
) -> Result<CheckpointChoice, GatingError> {
    expect_kind(col, DocKind::Checkpoint)?;
    let ranked = col.rank(&queries.positives, &queries.negative)?;
    choose_checkpoint(&ranked, policy, rails)
}

/// Checkpoint choice over hits already in rank order.
pub fn choose_checkpoint<T: Scalar>(
    ranked: &[ScoredHit<T>],
    policy: &RetrievalPolicy,
    rails: &Guardrails,
) -> Result<CheckpointChoice, GatingError> {
    let mut trace = Vec::new();
    let filtered: Vec<&str> = ranked
        .iter()
        .filter(|h| !rails.allows(&h.record))
        .map(|h| h.record.id.as_str())
        .collect();
    if !filtered.is_empty() {
        trace.push(format!("checkpoint guardrails removed: {}", filtered.join(", ")));
    }
    let mut surviving = ranked.iter().filter(|h| rails.allows(&h.record));
    let best = surviving.clone().next().ok_or(GatingError::NoCheckpointAvailable)?;
    let (hit, threshold_met) = match surviving.find(|h| h.passes(policy.omega_c)) {
        Some(hit) => {
            trace.push(format!(
                "checkpoint `{}` threshold met (margin_sum {:.4} >= omega_c {:.4})",
                hit.record.id,
                hit.margin_sum.as_f64(),
                policy.omega_c
            ));
            (hit, true)
        }
        None => {
            trace.push(format!(
                "no checkpoint met omega_c {:.4}; fallback to best-ranked `{}` (context {:.4}, margin_sum {:.4})",
                policy.omega_c,
                best.record.id,
                best.context.as_f64(),
                best.margin_sum.as_f64()
            ));
            (best, false)
        }
    };
    Ok(CheckpointChoice {
        record: hit.record.clone(),
        context: hit.context.as_f64(),
        margin_sum: hit.margin_sum.as_f64(),
        threshold_met,
        trace,
    })
}

pub fn query_loras<T: Scalar>(
    col: &Collection<T>,
    queries: &QuerySet<T>,
    policy: &RetrievalPolicy,
    rails: &Guardrails,
) -> Result<AdapterChoice, GatingError> {
    expect_kind(col, DocKind::Adapter)?;
    let ranked = col.rank(&queries.positives, &queries.negative)?;
    Ok(gate_adapters(&ranked, policy, rails))
}

/// Threshold-decay loop over hits already in rank order. Terminates after at
/// most `max_decay_iters` decays; may return fewer than `k` adapters, or none.
pub fn gate_adapters<T: Scalar>(
    ranked: &[ScoredHit<T>],
    policy: &RetrievalPolicy,
    rails: &Guardrails,
) -> AdapterChoice {
    let mut trace = Vec::new();
    let surviving: Vec<&ScoredHit<T>> = ranked.iter().filter(|h| rails.allows(&h.record)).collect();
    let removed = ranked.len() - surviving.len();
    if removed > 0 {
        let ids: Vec<&str> = ranked
            .iter()
            .filter(|h| !rails.allows(&h.record))
            .map(|h| h.record.id.as_str())
            .collect();
        trace.push(format!("adapter guardrails removed: {}", ids.join(", ")));
    }
    let k = policy.k_adapters;
    let mut decays = 0u32;
    let (selected, threshold) = loop {
        let threshold = policy.threshold_after(decays);
        let selected: Vec<&ScoredHit<T>> = surviving
            .iter()
            .copied()
            .filter(|h| h.margin_sum.as_f64() >= threshold)
            .take(k)
            .collect();
        if selected.len() >= k {
            trace.push(format!("collected {k} adapters at threshold {threshold:.4} after {decays} decays"));
            break (selected, threshold);
        }
        if surviving.is_empty() || decays >= policy.max_decay_iters {
            trace.push(format!(
                "adapter gating exhausted: {} of {k} adapters at threshold {threshold:.4} after {decays} decays",
                selected.len()
            ));
            break (selected, threshold);
        }
        decays += 1;
    };
    let weight = if selected.is_empty() { 0.0 } else { 1.0 / selected.len() as f64 };
    AdapterChoice {
        adapters: selected
            .into_iter()
            .map(|h| WeightedAdapter {
                record: h.record.clone(),
                weight,
            })
            .collect(),
        decays,
        final_threshold: threshold,
        trace,
    }
}

/// Checkpoint plus adapters for one query set.
pub fn select<T: Scalar>(
    checkpoints: &Collection<T>,
    adapters: &Collection<T>,
    queries: &QuerySet<T>,
    policy: &RetrievalPolicy,
    rails: &Guardrails,
) -> Result<SelectionResult, GatingError> {
    policy.validate()?;
    let ckpt = select_checkpoint(checkpoints, queries, policy, rails)?;
    let loras = query_loras(adapters, queries, policy, rails)?;
    let mut trace = ckpt.trace;
    trace.extend(loras.trace);
    Ok(SelectionResult {
        checkpoint: ckpt.record,
        adapters: loras.adapters,
        trace,
    })
}
