use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::GeneratedImage;
use crate::concept::ConceptMap;
use crate::gating::SelectionResult;
use crate::llm::LedgerSnapshot;
use crate::workflow::GenerationWorkflow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decompose,
    Enhance,
    BuildQueries,
    SelectCheckpoint,
    SelectAdapters,
    Compose,
    Refine,
    Generate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Decompose => "decompose",
            Stage::Enhance => "enhance",
            Stage::BuildQueries => "build_queries",
            Stage::SelectCheckpoint => "select_checkpoint",
            Stage::SelectAdapters => "select_adapters",
            Stage::Compose => "compose",
            Stage::Refine => "refine",
            Stage::Generate => "generate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Generate,
    Compose,
    Refine,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub millis: f64,
    /// Ledger tokens charged during the stage.
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The request itself was unusable.
    Input,
    /// A provider, backend or collection failed.
    #[default]
    Upstream,
    /// The generation queue was full.
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    #[serde(default)]
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub context: f64,
    pub margin_sum: f64,
}

/// Ranked candidates and gating details, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub checkpoints: Vec<Candidate>,
    pub adapters: Vec<Candidate>,
    pub omega_c: f64,
    pub checkpoint_threshold_met: bool,
    pub adapter_decays: u32,
    pub adapter_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSource {
    pub image_index: usize,
    pub denoise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub request_id: String,
    pub sequence: u64,
    pub kind: RunKind,
    pub parent_id: Option<String>,
    pub refine_source: Option<RefineSource>,
    pub input_prompt: String,
    pub concept_map: Option<ConceptMap>,
    pub selection: Option<SelectionResult>,
    pub retrieval: Option<RetrievalReport>,
    pub workflow: Option<GenerationWorkflow>,
    pub images: Vec<GeneratedImage>,
    pub ledger_snapshot: LedgerSnapshot,
    pub timings: Vec<StageTiming>,
    pub failure: Option<StageFailure>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.timings.iter().map(|t| t.stage).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }
}
