//! Generation workflows: one checkpoint, weighted adapters, prompts and knobs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::ConceptMap;
use crate::gating::{Guardrails, SelectionResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("invalid generation knobs: {0}")]
    InvalidKnobs(String),
    #[error("a cfg sweep needs at least one value")]
    EmptySweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRef {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationWorkflow {
    pub checkpoint_id: String,
    pub adapters: Vec<AdapterRef>,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub cfg_scale: f64,
    pub seed: i64,
    pub width: u32,
    pub height: u32,
    pub batch_size: u32,
}

/// User-tunable generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Knobs {
    pub cfg_scale: f64,
    /// `None` draws a random seed at compose time.
    pub seed: Option<i64>,
    pub width: u32,
    pub height: u32,
    pub batch_size: u32,
    /// Overrides the uniform `1/n` adapter weight.
    pub adapter_weight: Option<f64>,
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            cfg_scale: 7.0,
            seed: None,
            width: 512,
            height: 512,
            batch_size: 3,
            adapter_weight: None,
        }
    }
}

impl Knobs {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let bad = |m: String| Err(WorkflowError::InvalidKnobs(m));
        if !(self.cfg_scale.is_finite() && self.cfg_scale > 0.0) {
            return bad(format!("cfg_scale {} must be positive", self.cfg_scale));
        }
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v < 512 || v % 8 != 0 {
                return bad(format!("{name} {v} must be >= 512 and a multiple of 8"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(w) = self.adapter_weight {
            if !(w > 0.0 && w <= 1.0) {
                return bad(format!("adapter_weight {w} must lie in (0, 1]"));
            }
        }
        if let Some(seed) = self.seed {
            if seed < 0 {
                return bad(format!("seed {seed} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Render an adapter weight without float noise: at most 4 decimals.
pub fn format_weight(weight: f64) -> String {
    let s = format!("{:.4}", weight);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".into() } else { s.to_string() }
}

pub fn lora_tag(adapter: &AdapterRef) -> String {
    format!("<lora:{}:{}>", adapter.id, format_weight(adapter.weight))
}

impl GenerationWorkflow {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        Knobs {
            cfg_scale: self.cfg_scale,
            seed: Some(self.seed),
            width: self.width,
            height: self.height,
            batch_size: self.batch_size,
            adapter_weight: None,
        }
        .validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workflow serializes")
    }

    /// Ids named by `<lora:id:weight>` tags in the positive prompt.
    pub fn prompt_adapter_ids(&self) -> Vec<String> {
        parse_lora_tags(&self.positive_prompt)
            .into_iter()
            .map(|a| a.id)
            .collect()
    }
}

/// Extract `<lora:id:weight>` tags from a prompt.
pub fn parse_lora_tags(prompt: &str) -> Vec<AdapterRef> {
    let mut out = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find("<lora:") {
        let after = &rest[start + "<lora:".len()..];
        let Some(end) = after.find('>') else { break };
        let body = &after[..end];
        if let Some((id, weight)) = body.rsplit_once(':') {
            if let Ok(weight) = weight.parse() {
                out.push(AdapterRef {
                    id: id.to_string(),
                    weight,
                });
            }
        }
        rest = &after[end + 1..];
    }
    out
}

/// Build the workflow: assembled concept prompt followed by one lora tag per
/// adapter in selection order. Adapters failing `rails` are dropped.
pub fn compose(
    map: &ConceptMap,
    selection: &SelectionResult,
    knobs: &Knobs,
    negative_prompt: &str,
    rails: &Guardrails,
) -> Result<GenerationWorkflow, WorkflowError> {
    knobs.validate()?;
    let adapters: Vec<AdapterRef> = selection
        .adapters
        .iter()
        .filter(|a| rails.allows(&a.record))
        .map(|a| AdapterRef {
            id: a.record.id.clone(),
            weight: knobs.adapter_weight.unwrap_or(a.weight),
        })
        .collect();
    let mut positive_prompt = map.assemble_prompt();
    for adapter in &adapters {
        positive_prompt.push_str(", ");
        positive_prompt.push_str(&lora_tag(adapter));
    }
    let seed = knobs
        .seed
        .unwrap_or_else(|| (rand::random::<u32>() >> 1) as i64);
    Ok(GenerationWorkflow {
        checkpoint_id: selection.checkpoint.id.clone(),
        adapters,
        positive_prompt,
        negative_prompt: negative_prompt.to_string(),
        cfg_scale: knobs.cfg_scale,
        seed,
        width: knobs.width,
        height: knobs.height,
        batch_size: knobs.batch_size,
    })
}

/// One clone per cfg value, differing only in `cfg_scale`.
pub fn vary_cfg(w: &GenerationWorkflow, values: &[f64]) -> Result<Vec<GenerationWorkflow>, WorkflowError> {
    if values.is_empty() {
        return Err(WorkflowError::EmptySweep);
    }
    values
        .iter()
        .map(|&cfg| {
            if !(cfg.is_finite() && cfg > 0.0) {
                return Err(WorkflowError::InvalidKnobs(format!("cfg_scale {cfg} must be positive")));
            }
            Ok(GenerationWorkflow {
                cfg_scale: cfg,
                ..w.clone()
            })
        })
        .collect()
}

/// Refinement hook between adapter selection and generation. Currently the identity.
pub fn refine_passthrough(w: GenerationWorkflow) -> GenerationWorkflow {
    w
}
