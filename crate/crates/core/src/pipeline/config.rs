use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::enhance::EnhancementScope;
use crate::gating::{Guardrails, RetrievalPolicy};
use crate::llm::ProviderConfig;
use crate::workflow::Knobs;

use super::PipelineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    /// Every stage duration is recorded as zero, keeping records reproducible.
    #[default]
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementConfig {
    pub details: usize,
    pub scope: EnhancementScope,
    pub template_path: Option<PathBuf>,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            details: 8,
            scope: EnhancementScope::MainAndSupport,
            template_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardrailsConfig {
    pub path: Option<PathBuf>,
    /// Same line format as the guardrails file.
    pub inline: String,
}

impl GuardrailsConfig {
    pub fn resolve(&self, base: &Path) -> Result<Guardrails, PipelineError> {
        let mut rails = Guardrails::parse(&self.inline);
        if let Some(path) = &self.path {
            let loaded = Guardrails::load(&base.join(path)).map_err(|e| PipelineError::Config(e.to_string()))?;
            rails = rails.merged(&loaded);
        }
        Ok(rails)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionNames {
    pub checkpoints: String,
    pub adapters: String,
}

impl Default for CollectionNames {
    fn default() -> Self {
        Self {
            checkpoints: "checkpoints".into(),
            adapters: "adapters".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Backend queue depth at which generation requests are answered with 202.
    pub async_threshold: usize,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            async_threshold: 1,
            ui_dir: None,
        }
    }
}

/// Everything a pipeline needs. The default is fully offline: mock
/// providers, stub backend, frozen clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_dir: PathBuf,
    pub llm: ProviderConfig,
    pub embedding: ProviderConfig,
    pub judge: ProviderConfig,
    pub policy: RetrievalPolicy,
    pub guardrails: GuardrailsConfig,
    pub backend: BackendConfig,
    pub enhancement: EnhancementConfig,
    pub knobs: Knobs,
    pub collections: CollectionNames,
    /// Checkpoint used by the unassisted baseline; first in the collection if unset.
    pub base_checkpoint: Option<String>,
    pub decomposition_template: Option<PathBuf>,
    pub clock: ClockMode,
    pub budget: Option<u64>,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("manta-data"),
            llm: ProviderConfig::default(),
            embedding: ProviderConfig::default(),
            judge: ProviderConfig::default(),
            policy: RetrievalPolicy::default(),
            guardrails: GuardrailsConfig::default(),
            backend: BackendConfig::default(),
            enhancement: EnhancementConfig::default(),
            knobs: Knobs::default(),
            collections: CollectionNames::default(),
            base_checkpoint: None,
            decomposition_template: None,
            clock: ClockMode::default(),
            budget: None,
            service: ServiceConfig::default(),
        }
    }
}

impl Config {
    /// Parse TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config: Config = if is_json {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.llm.validate().map_err(|e| cfg(format!("llm: {e}")))?;
        self.embedding.validate().map_err(|e| cfg(format!("embedding: {e}")))?;
        self.judge.validate().map_err(|e| cfg(format!("judge: {e}")))?;
        self.policy.validate().map_err(|e| cfg(e.to_string()))?;
        self.backend.validate().map_err(|e| cfg(e.to_string()))?;
        self.knobs.validate().map_err(|e| cfg(e.to_string()))?;
        if self.enhancement.details == 0 {
            return Err(cfg("enhancement.details must be at least 1".into()));
        }
        Ok(())
    }

    pub fn collections_dir(&self) -> PathBuf {
        self.data_dir.join("collections")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_dir.join("runs")
    }

    pub fn collection_path(&self, name: &str) -> PathBuf {
        self.collections_dir().join(format!("{name}.mnta"))
    }
}
