//! Prompt-to-workflow engine: concept decomposition, detail enhancement,
//! triplet-gated retrieval of checkpoints and adapters, workflow assembly,
//! generation and pairwise evaluation.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod backend;
pub mod concept;
pub mod embedding;
pub mod enhance;
pub mod eval;
pub mod gating;
pub mod hashing;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod scalar;
pub mod workflow;

pub use scalar::Scalar;

pub type Embedding32 = embedding::EmbeddingVector<f32>;
pub type Embedding64 = embedding::EmbeddingVector<f64>;
pub type Collection32 = index::Collection<f32>;
pub type Collection64 = index::Collection<f64>;
pub type ScoredHit32 = index::ScoredHit<f32>;
pub type ScoredHit64 = index::ScoredHit<f64>;
pub type FeatureSet32 = eval::FeatureSet<f32>;
pub type FeatureSet64 = eval::FeatureSet<f64>;

pub use pipeline::{Config, Pipeline, RunRecord, RunRequest};
