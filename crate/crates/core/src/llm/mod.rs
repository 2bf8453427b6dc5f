//! Provider-agnostic access to chat completion, embeddings and judging.
//!
//! Every call goes through a [`Gateway`] and is charged to a [`TokenLedger`].
//! Budgets are enforced before dispatch, on the projected prompt tokens.

mod http;
mod judge;
mod ledger;
mod mock;
mod tokenizer;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::GeneratedImage;
use crate::embedding::EmbeddingVector;

pub use http::HttpProvider;
pub use judge::{parse_verdict, render_judge_prompt, Criterion, JudgeVerdict, Winner};
pub use ledger::{LedgerSnapshot, TokenLedger};
pub use mock::{MockJudgeMode, MockProvider, DEFAULT_MOCK_DIMENSION};
pub use tokenizer::{count_tokens, count_tokens_bytes, Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("token budget exceeded: {used} used + {projected} projected > {budget}")]
    BudgetExceeded { used: u64, projected: u64, budget: u64 },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("judge response has no winner: {0}")]
    UnparseableVerdict(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// Where and how to reach a model provider. API keys are only ever read
/// from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "mock://0".into(),
            model_id: "mock".into(),
            api_key_env: None,
            timeout_secs: 60.0,
            max_retries: 2,
            retry_backoff_ms: 250,
        }
    }
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            endpoint: format!("mock://{seed}"),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock://")
    }
}

/// The raw transport behind a [`Gateway`]. Implementations do no accounting.
pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError>;

    /// Returns the judge's free-text answer for `prompt` over two image sets,
    /// set A attached first.
    fn judge(
        &self,
        prompt: &str,
        images_a: &[GeneratedImage],
        images_b: &[GeneratedImage],
    ) -> Result<String, LlmError>;
}

/// Accounting front door to a [`Provider`].
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

impl Gateway {
    /// `mock://` endpoints get the offline mock; anything else is treated as
    /// an OpenAI-compatible base URL.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let provider: Arc<dyn Provider> = if cfg.is_mock() {
            Arc::new(MockProvider::from_endpoint(&cfg.endpoint)?)
        } else {
            Arc::new(HttpProvider::new(cfg.clone())?)
        };
        Ok(Self::new(provider))
    }

    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            tokenizer: Arc::new(WhitespaceTokenizer),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn count_tokens(&self, text: &str) -> u64 {
        self.tokenizer.count(text)
    }

    /// Charges prompt plus response tokens.
    pub fn complete(&self, prompt: &str, ledger: &TokenLedger) -> Result<String, LlmError> {
        let prompt_tokens = self.count_tokens(prompt);
        ledger.check(prompt_tokens)?;
        let response = self.provider.complete(prompt)?;
        ledger.charge_completion(prompt_tokens + self.count_tokens(&response));
        Ok(response)
    }

    pub fn embed(
        &self,
        texts: &[String],
        ledger: &TokenLedger,
    ) -> Result<Vec<EmbeddingVector<f32>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let tokens: u64 = texts.iter().map(|t| self.count_tokens(t)).sum();
        ledger.check(tokens)?;
        let raw = self.provider.embed(texts)?;
        ledger.charge_embedding(tokens);
        if raw.len() != texts.len() {
            return Err(LlmError::Provider(format!(
                "asked for {} embeddings, received {}",
                texts.len(),
                raw.len()
            )));
        }
        let expected = raw[0].len();
        raw.into_iter()
            .map(|values| {
                if values.len() != expected {
                    return Err(LlmError::DimensionMismatch {
                        expected,
                        actual: values.len(),
                    });
                }
                EmbeddingVector::new(values)
                    .map_err(|e| LlmError::Provider(format!("invalid embedding: {e}")))
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str, ledger: &TokenLedger) -> Result<EmbeddingVector<f32>, LlmError> {
        Ok(self
            .embed(&[text.to_string()], ledger)?
            .pop()
            .expect("one embedding per text"))
    }

    /// One judge call in the given presentation order. Only the rendered
    /// instruction text and the response are charged; images are not.
    pub fn judge_pair(
        &self,
        images_a: &[GeneratedImage],
        images_b: &[GeneratedImage],
        criterion: Criterion,
        prompt: &str,
        ledger: &TokenLedger,
    ) -> Result<JudgeVerdict, LlmError> {
        if images_a.is_empty() || images_b.is_empty() {
            return Err(LlmError::Provider("judge needs two non-empty image sets".into()));
        }
        let instructions = render_judge_prompt(criterion, prompt, images_a.len(), images_b.len());
        let prompt_tokens = self.count_tokens(&instructions);
        ledger.check(prompt_tokens)?;
        let response = self.provider.judge(&instructions, images_a, images_b)?;
        ledger.charge_completion(prompt_tokens + self.count_tokens(&response));
        parse_verdict(criterion, &response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(tag: &str) -> GeneratedImage {
        GeneratedImage {
            bytes: tag.as_bytes().to_vec(),
            seed_used: 0,
            feature_vector: None,
        }
    }

    #[test]
    fn mock_completion_is_deterministic_and_charged_exactly() {
        let gw = Gateway::from_config(&ProviderConfig::mock(7)).unwrap();
        let ledger = TokenLedger::unlimited();
        let first = gw.complete("ping", &ledger).unwrap();
        assert_eq!(ledger.completion_tokens(), 1 + count_tokens(&first));
        let again = gw.complete("ping", &TokenLedger::unlimited()).unwrap();
        assert_eq!(first, again);
        let other_seed = Gateway::from_config(&ProviderConfig::mock(8)).unwrap();
        assert_ne!(first, other_seed.complete("ping", &TokenLedger::unlimited()).unwrap());
    }

    #[test]
    fn at_budget_fails_before_dispatch() {
        struct Panicking;
        impl Provider for Panicking {
            fn complete(&self, _: &str) -> Result<String, LlmError> {
                panic!("must not be called")
            }
            fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
                panic!("must not be called")
            }
            fn judge(&self, _: &str, _: &[GeneratedImage], _: &[GeneratedImage]) -> Result<String, LlmError> {
                panic!("must not be called")
            }
        }
        let gw = Gateway::new(Arc::new(Panicking));
        let ledger = TokenLedger::new(Some(5));
        ledger.charge_completion(5);
        assert!(matches!(gw.complete("", &ledger), Err(LlmError::BudgetExceeded { .. })));
        assert!(matches!(
            gw.embed(&["x".into()], &ledger),
            Err(LlmError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn embedding_dimension_and_token_delta() {
        let gw = Gateway::from_config(&ProviderConfig::mock(0)).unwrap();
        let ledger = TokenLedger::unlimited();
        let texts: Vec<String> = vec!["red fox in snow".into(), "red fox in snow".into(), "x".into()];
        let vs = gw.embed(&texts, &ledger).unwrap();
        assert!(vs.iter().all(|v| v.dimension() == DEFAULT_MOCK_DIMENSION));
        assert_eq!(vs[0], vs[1]);
        let independent: u64 = texts.iter().map(|t| t.split_whitespace().count() as u64).sum();
        assert_eq!(ledger.embedding_tokens(), independent);
        assert_eq!(ledger.completion_tokens(), 0);
    }

    #[test]
    fn ragged_embeddings_are_rejected() {
        struct Ragged;
        impl Provider for Ragged {
            fn complete(&self, _: &str) -> Result<String, LlmError> {
                unreachable!()
            }
            fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
                Ok(vec![vec![1.0, 0.0], vec![1.0]])
            }
            fn judge(&self, _: &str, _: &[GeneratedImage], _: &[GeneratedImage]) -> Result<String, LlmError> {
                unreachable!()
            }
        }
        let err = Gateway::new(Arc::new(Ragged))
            .embed(&["a".into(), "b".into()], &TokenLedger::unlimited())
            .unwrap_err();
        assert_eq!(err, LlmError::DimensionMismatch { expected: 2, actual: 1 });
    }

    #[test]
    fn symmetric_mock_judge_flips_on_swap_and_ties_to_a() {
        let gw = Gateway::from_config(&ProviderConfig::mock(1)).unwrap();
        let ledger = TokenLedger::unlimited();
        let a = [image("a1"), image("a2")];
        let b = [image("b1"), image("b2")];
        for c in Criterion::ALL {
            let ab = gw.judge_pair(&a, &b, c, "p", &ledger).unwrap();
            let ba = gw.judge_pair(&b, &a, c, "p", &ledger).unwrap();
            assert_eq!(ab.winner, ba.winner.flipped());
            assert_eq!(gw.judge_pair(&a, &a, c, "p", &ledger).unwrap().winner, Winner::A);
        }
        assert!(gw.judge_pair(&[], &b, Criterion::Quality, "p", &ledger).is_err());
    }

    #[test]
    fn ledger_conservation_over_mixed_calls() {
        let gw = Gateway::from_config(&ProviderConfig::mock(2)).unwrap();
        let ledger = TokenLedger::unlimited();
        let mut summed = 0;
        for i in 0..10 {
            let before = ledger.snapshot();
            if i % 2 == 0 {
                gw.complete(&format!("prompt number {i}"), &ledger).unwrap();
            } else {
                gw.embed(&[format!("text {i}")], &ledger).unwrap();
            }
            summed += ledger.snapshot().since(&before).total();
        }
        assert_eq!(ledger.total(), summed);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::mock(0);
        cfg.timeout_secs = 0.0;
        assert!(Gateway::from_config(&cfg).is_err());
        let cfg = ProviderConfig {
            endpoint: "http://localhost:1".into(),
            api_key_env: Some("MANTA_TEST_SURELY_UNSET_VAR".into()),
            ..Default::default()
        };
        assert!(matches!(Gateway::from_config(&cfg), Err(LlmError::Config(_))));
    }
}
