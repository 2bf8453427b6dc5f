//! LLM detail enhancement: ask for `n` specific details about a concept and
//! merge the parsed fragments into its detail list.

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::{Concept, ConceptMap};
use crate::llm::{Gateway, LlmError, TokenLedger};

pub const DEFAULT_DETAIL_TEMPLATE: &str = include_str!("../assets/detail_enhancement.txt");

/// Fragments longer than this are treated as prose, not prompt tags.
pub const MAX_FRAGMENT_CHARS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnhanceError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("enhancement response contained no usable fragments")]
    EmptyEnhancement,
    #[error("template is missing the `{0}` placeholder")]
    Template(&'static str),
    #[error("cannot read template: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnhancementRequest {
    pub concept: Concept,
    pub n: NonZeroUsize,
}

impl EnhancementRequest {
    pub fn new(concept: Concept, n: NonZeroUsize) -> Self {
        Self { concept, n }
    }
}

/// Which parts of a concept map receive enhancement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementScope {
    None,
    MainOnly,
    #[default]
    MainAndSupport,
}

/// Optional post-filter on parsed fragments (e.g. a part-of-speech check).
pub type FragmentValidator = Arc<dyn Fn(&str) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct DetailEnhancer {
    template: String,
    validator: Option<FragmentValidator>,
}

impl Default for DetailEnhancer {
    fn default() -> Self {
        Self {
            template: DEFAULT_DETAIL_TEMPLATE.to_string(),
            validator: None,
        }
    }
}

impl std::fmt::Debug for DetailEnhancer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetailEnhancer")
            .field("template_len", &self.template.len())
            .field("validator", &self.validator.is_some())
            .finish()
    }
}

impl DetailEnhancer {
    pub fn with_template(template: impl Into<String>) -> Result<Self, EnhanceError> {
        let template = template.into();
        for placeholder in ["{n}", "{concept}"] {
            if !template.contains(placeholder) {
                return Err(EnhanceError::Template(placeholder));
            }
        }
        Ok(Self {
            template,
            validator: None,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, EnhanceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnhanceError::Io(format!("{}: {e}", path.display())))?;
        Self::with_template(text)
    }

    pub fn with_validator(mut self, validator: FragmentValidator) -> Self {
        self.validator = Some(validator);
        self
    }

    pub fn render_detail_prompt(&self, req: &EnhancementRequest) -> String {
        self.template
            .replace("{n}", &req.n.to_string())
            .replace("{concept}", &req.concept.flatten_to_query())
    }

    /// Ask for `n` details and merge the first `n` parsed fragments.
    pub fn enhance_concept(
        &self,
        gateway: &Gateway,
        req: &EnhancementRequest,
        ledger: &TokenLedger,
    ) -> Result<Concept, EnhanceError> {
        let prompt = self.render_detail_prompt(req);
        let response = gateway.complete(&prompt, ledger)?;
        let mut fragments = parse_fragments(&response);
        if let Some(validator) = &self.validator {
            fragments.retain(|f| validator(f));
        }
        if fragments.is_empty() {
            return Err(EnhanceError::EmptyEnhancement);
        }
        fragments.truncate(req.n.get());
        Ok(req.concept.merge_details(fragments))
    }

    /// Enhance the concepts selected by `scope`; styles are left untouched.
    pub fn enhance_map(
        &self,
        gateway: &Gateway,
        map: &ConceptMap,
        n: NonZeroUsize,
        scope: EnhancementScope,
        ledger: &TokenLedger,
    ) -> Result<ConceptMap, EnhanceError> {
        if scope == EnhancementScope::None {
            return Ok(map.clone());
        }
        let main = self.enhance_concept(gateway, &EnhancementRequest::new(map.main().clone(), n), ledger)?;
        let support = if scope == EnhancementScope::MainAndSupport {
            map.support()
                .iter()
                .map(|c| self.enhance_concept(gateway, &EnhancementRequest::new(c.clone(), n), ledger))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            map.support().to_vec()
        };
        Ok(map.clone().with_main(main).with_support(support))
    }
}

/// Split an LLM list response into clean fragments, in emitted order.
pub fn parse_fragments(response: &str) -> Vec<String> {
    response
        .split([',', '\n', ';'])
        .filter_map(clean_fragment)
        .collect()
}

fn clean_fragment(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    if let Some(rest) = strip_prefix_ci(s, "response:") {
        s = rest.trim_start();
    }
    s = s.trim_start_matches(['-', '*', '•', '·', '–']).trim_start();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let after = &s[digits..];
        if let Some(rest) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            s = rest.trim_start();
        }
    }
    let s = s
        .trim_matches(|c: char| matches!(c, '\'' | '"' | '`' | '[' | ']' | '“' | '”' | '‘' | '’') || c.is_whitespace())
        .trim_end_matches('.');
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if s.is_empty() || s.chars().count() > MAX_FRAGMENT_CHARS || s == "..." {
        None
    } else {
        Some(s)
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}
