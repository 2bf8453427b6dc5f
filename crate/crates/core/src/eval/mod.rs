//! Pairwise judge evaluation, token reporting, Fréchet distance and the
//! synthetic data expansion loop.

mod expand;
mod frechet;
pub mod linalg;
mod pairwise;

use thiserror::Error;

use crate::llm::Criterion;

pub use expand::{synthetic_expand, ExpansionOutcome, ExpansionStep};
pub use frechet::{frechet_distance, FeatureSet, FRECHET_JITTER};
pub use pairwise::{
    evaluate_pair, token_report, win_rate, CriterionVerdict, EvalRun, ImageSource, Outcome, PromptEvaluation,
    RateRow, SystemUsage, TokenReport, TokenRow, TokenTotals,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no verdicts for criterion {0}")]
    NoVerdicts(Criterion),
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("a feature set needs at least 2 vectors, got {0}")]
    TooFewSamples(usize),
    #[error("invalid features: {0}")]
    InvalidFeatures(String),
}
