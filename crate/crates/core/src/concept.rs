//! Structured concept representation: a prompt decomposed into one main
//! concept, zero or more supporting concepts, and image-level fragments.
//!
//! LLM output is parsed leniently (code fences, surrounding prose, Python
//! dict literals with single quotes) but validated strictly.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConceptError {
    #[error("malformed decomposition: {0}")]
    MalformedDecomposition(String),
    #[error("concept name is empty")]
    EmptyName,
}

fn malformed(msg: impl Into<String>) -> ConceptError {
    ConceptError::MalformedDecomposition(msg.into())
}

/// Trim each fragment, drop empties, and de-duplicate case-insensitively
/// keeping the first occurrence's casing.
fn dedup_fragments<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for item in items {
        push_unique(&mut out, item.as_ref());
    }
    out
}

fn push_unique(list: &mut Vec<String>, fragment: &str) -> bool {
    let fragment = collapse_whitespace(fragment);
    if fragment.is_empty() {
        return false;
    }
    let key = fragment.to_lowercase();
    if list.iter().any(|existing| existing.to_lowercase() == key) {
        return false;
    }
    list.push(fragment);
    true
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Deserialize)]
struct RawConcept {
    name: String,
    #[serde(default)]
    styles: Vec<String>,
    #[serde(default)]
    details: Vec<String>,
}

/// A named concept with descriptive details and rendering styles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConcept")]
pub struct Concept {
    name: String,
    styles: Vec<String>,
    details: Vec<String>,
}

impl TryFrom<RawConcept> for Concept {
    type Error = ConceptError;

    fn try_from(raw: RawConcept) -> Result<Self, Self::Error> {
        Concept::new(raw.name, raw.details, raw.styles)
    }
}

impl Concept {
    pub fn new<D, S>(
        name: impl AsRef<str>,
        details: impl IntoIterator<Item = D>,
        styles: impl IntoIterator<Item = S>,
    ) -> Result<Self, ConceptError>
    where
        D: AsRef<str>,
        S: AsRef<str>,
    {
        let name = collapse_whitespace(name.as_ref());
        if name.is_empty() {
            return Err(ConceptError::EmptyName);
        }
        Ok(Self {
            name,
            details: dedup_fragments(details),
            styles: dedup_fragments(styles),
        })
    }

    /// A concept with a name and nothing else.
    pub fn named(name: impl AsRef<str>) -> Result<Self, ConceptError> {
        Self::new(name, Vec::<String>::new(), Vec::<String>::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn details(&self) -> &[String] {
        &self.details
    }

    pub fn styles(&self) -> &[String] {
        &self.styles
    }

    /// Extend the details in order, skipping anything already present
    /// (case-insensitive).
    pub fn merge_details<S: AsRef<str>>(&self, extra: impl IntoIterator<Item = S>) -> Concept {
        let mut merged = self.clone();
        for fragment in extra {
            push_unique(&mut merged.details, fragment.as_ref());
        }
        merged
    }

    /// Retrieval query text: name, details, then styles, single-spaced.
    pub fn flatten_to_query(&self) -> String {
        let mut parts = Vec::with_capacity(1 + self.details.len() + self.styles.len());
        parts.push(self.name.as_str());
        parts.extend(self.details.iter().map(String::as_str));
        parts.extend(self.styles.iter().map(String::as_str));
        collapse_whitespace(&parts.join(" "))
    }

    /// Prompt fragments in assembly order: name, details, styles.
    fn fragments(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str())
            .chain(self.details.iter().map(String::as_str))
            .chain(self.styles.iter().map(String::as_str))
    }
}

/// Image-level (global) fragments that apply to the whole picture.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawImageSpec")]
pub struct ImageSpec {
    styles: Vec<String>,
    details: Vec<String>,
}

#[derive(Deserialize)]
struct RawImageSpec {
    #[serde(default)]
    styles: Vec<String>,
    #[serde(default)]
    details: Vec<String>,
}

impl From<RawImageSpec> for ImageSpec {
    fn from(raw: RawImageSpec) -> Self {
        ImageSpec::new(raw.details, raw.styles)
    }
}

impl ImageSpec {
    pub fn new<D: AsRef<str>, S: AsRef<str>>(
        details: impl IntoIterator<Item = D>,
        styles: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            styles: dedup_fragments(styles),
            details: dedup_fragments(details),
        }
    }

    pub fn styles(&self) -> &[String] {
        &self.styles
    }

    pub fn details(&self) -> &[String] {
        &self.details
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty() && self.details.is_empty()
    }
}

#[derive(Deserialize)]
struct RawConceptMap {
    main: Concept,
    #[serde(default)]
    support: Vec<Concept>,
    #[serde(default)]
    image: ImageSpec,
}

/// Decomposition of a prompt into main, supporting, and image-level parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConceptMap")]
pub struct ConceptMap {
    main: Concept,
    support: Vec<Concept>,
    image: ImageSpec,
}

impl TryFrom<RawConceptMap> for ConceptMap {
    type Error = ConceptError;

    fn try_from(raw: RawConceptMap) -> Result<Self, Self::Error> {
        Ok(ConceptMap::new(raw.main, raw.support, raw.image))
    }
}

impl ConceptMap {
    /// Supporting concepts that repeat the main name (or each other) are dropped.
    pub fn new(main: Concept, support: Vec<Concept>, image: ImageSpec) -> Self {
        let mut seen = vec![main.name.to_lowercase()];
        let support = support
            .into_iter()
            .filter(|c| {
                let key = c.name.to_lowercase();
                if seen.contains(&key) {
                    false
                } else {
                    seen.push(key);
                    true
                }
            })
            .collect();
        Self {
            main,
            support,
            image,
        }
    }

    pub fn main(&self) -> &Concept {
        &self.main
    }

    pub fn support(&self) -> &[Concept] {
        &self.support
    }

    pub fn image(&self) -> &ImageSpec {
        &self.image
    }

    /// Main first, then supports in order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        std::iter::once(&self.main).chain(self.support.iter())
    }

    pub fn with_main(mut self, main: Concept) -> Self {
        self.main = main;
        self
    }

    pub fn with_support(self, support: Vec<Concept>) -> Self {
        ConceptMap::new(self.main, support, self.image)
    }

    /// Deterministic positive prompt: main fragments, each support's
    /// fragments, then image details and styles, comma-separated.
    pub fn assemble_prompt(&self) -> String {
        let fragments: Vec<&str> = self
            .concepts()
            .flat_map(Concept::fragments)
            .chain(self.image.details.iter().map(String::as_str))
            .chain(self.image.styles.iter().map(String::as_str))
            .collect();
        fragments.join(", ")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("concept map serializes")
    }
}

/// Verbatim LLM output captured before parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDecomposition {
    pub source_text: String,
}

impl RawDecomposition {
    pub fn new(source_text: impl Into<String>) -> Self {
        Self {
            source_text: source_text.into(),
        }
    }
}

/// Parse an LLM decomposition into a validated [`ConceptMap`].
pub fn parse_concept_map(raw: &RawDecomposition) -> Result<ConceptMap, ConceptError> {
    let body = extract_mapping(&raw.source_text)
        .ok_or_else(|| malformed("no mapping found in output"))?;
    let value: Value = serde_json::from_str(body)
        .or_else(|_| serde_json::from_str(&python_literal_to_json(body)))
        .map_err(|e| malformed(format!("not a mapping: {e}")))?;
    concept_map_from_value(&value)
}

fn concept_map_from_value(value: &Value) -> Result<ConceptMap, ConceptError> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("top level is not a mapping"))?;
    let main = match obj.get("main") {
        Some(v @ Value::Object(_)) => concept_from_value(v, "main")?,
        Some(_) => return Err(malformed("`main` is not a mapping")),
        None => return Err(malformed("missing `main` concept")),
    };
    let support = match obj.get("support") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| concept_from_value(v, &format!("support[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(malformed("`support` is not a list")),
    };
    let image = match obj.get("image") {
        None | Some(Value::Null) => ImageSpec::default(),
        Some(Value::Object(img)) => ImageSpec::new(
            string_list(img.get("details"), "image.details")?,
            string_list(img.get("styles"), "image.styles")?,
        ),
        Some(_) => return Err(malformed("`image` is not a mapping")),
    };
    Ok(ConceptMap::new(main, support, image))
}

fn concept_from_value(value: &Value, at: &str) -> Result<Concept, ConceptError> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(format!("`{at}` is not a mapping")))?;
    let name = match obj.get("name") {
        Some(Value::String(s)) => s.as_str(),
        _ => return Err(malformed(format!("`{at}.name` missing or not text"))),
    };
    let details = string_list(obj.get("details"), &format!("{at}.details"))?;
    let styles = string_list(obj.get("styles"), &format!("{at}.styles"))?;
    Concept::new(name, details, styles).map_err(|_| malformed(format!("`{at}.name` is empty")))
}

fn string_list(value: Option<&Value>, at: &str) -> Result<Vec<String>, ConceptError> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(malformed(format!("`{at}` contains a non-text entry"))),
            })
            .collect(),
        Some(_) => Err(malformed(format!("`{at}` is not a list"))),
    }
}

/// Locate the outermost `{ ... }` block, honoring quoted strings of either kind.
fn extract_mapping(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (offset, ch) in text[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' => quote = Some(ch),
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + ch.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrite a Python dict literal (single-quoted strings, `True`/`False`/`None`,
/// trailing commas) into JSON.
fn python_literal_to_json(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        match ch {
            '\'' | '"' => {
                let quote = ch;
                out.push('"');
                i += 1;
                while i < chars.len() && chars[i] != quote {
                    match chars[i] {
                        '\\' if i + 1 < chars.len() => {
                            let next = chars[i + 1];
                            if next == '\'' {
                                out.push('\'');
                            } else {
                                out.push('\\');
                                out.push(next);
                            }
                            i += 2;
                            continue;
                        }
                        '"' => out.push_str("\\\""),
                        c => out.push(c),
                    }
                    i += 1;
                }
                out.push('"');
            }
            ',' => {
                let rest = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if !matches!(rest, Some('}') | Some(']')) {
                    out.push(',');
                }
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push_str(match word.as_str() {
                    "True" => "true",
                    "False" => "false",
                    "None" => "null",
                    other => other,
                });
                continue;
            }
            c => out.push(c),
        }
        i += 1;
    }
    out
}
