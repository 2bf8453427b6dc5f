//! Deterministic offline provider selected with `mock://<seed>`.
//!
//! Every response is a pure function of the seed and the request. The mock
//! recognizes the engine's own prompt templates (decomposition, detail
//! enhancement) and answers them plausibly so a full pipeline can run
//! without network access. Embeddings are hashed bag-of-words vectors, so
//! texts sharing words have high cosine similarity.

use crate::backend::GeneratedImage;
use crate::hashing::{hex8, stable_hash};

use super::{LlmError, Provider};

pub const DEFAULT_MOCK_DIMENSION: usize = 256;

/// How the mock judge decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockJudgeMode {
    /// Scores each image set independently; swapping sets flips the winner.
    Symmetric,
    /// Flips a coin on the ordered pair, so presentation order matters.
    Coin,
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    dimension: usize,
    judge_mode: MockJudgeMode,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "and", "or", "with", "his", "her", "its", "their", "my", "our",
    "your", "is", "are", "to", "in", "on", "at", "by", "for",
];

const CONNECTORS: &[&str] = &[
    "with", "and", "on", "in", "at", "by", "near", "beside", "next", "to", "of", "top", "under",
    "over", "behind", "inside", "into", "onto", "from", "front", "through", "across", "around",
    "above", "below", "against", "sits", "sit", "is", "are", "has", "have", "that", "while",
    "carries", "carry", "side",
];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "his", "her", "its", "their", "my", "our", "your", "some", "this", "that",
    "these", "those", "two", "three",
];

const DETAIL_VOCABULARY: &[&str] = &[
    "intricate engraved patterns",
    "weathered texture",
    "glowing accents",
    "polished chrome trim",
    "soft rim lighting",
    "matte black finish",
    "ornate gold filigree",
    "tattered fabric edges",
    "iridescent highlights",
    "deep crimson color",
    "subtle scratches",
    "layered plating",
    "braided leather straps",
    "frosted glass panels",
    "faint holographic glow",
    "heavy brass rivets",
    "silk ribbon details",
    "asymmetric silhouette",
    "high collar",
    "reflective visor",
    "emerald inlays",
    "cracked stone surface",
    "fine fur texture",
    "neon blue circuits",
    "carbon fiber panels",
    "ivory white highlights",
    "hand-painted markings",
    "dramatic shadows",
    "rusted iron bolts",
    "woven straw texture",
    "translucent membranes",
    "sharp angular edges",
    "velvet lining",
    "bioluminescent spots",
    "hexagonal mesh pattern",
    "sleek metallic armor",
];

/// Fragments preferred when the concept mentions the keyword.
const THEMED_DETAILS: &[(&str, &[&str])] = &[
    ("samurai", &["lacquered samurai armor", "katana at the hip", "kabuto helmet"]),
    ("warrior", &["battle stance", "armor plates with rivets"]),
    ("techno", &["glowing blue circuits", "sleek metallic armor"]),
    ("cyberpunk", &["neon glow", "robotic implants", "city street at night"]),
    ("dog", &["glowing neon collar", "fluffy fur", "mechanical legs"]),
    ("cat", &["cat ears", "fluffy tail"]),
    ("robot", &["exposed gears", "hydraulic pistons"]),
    ("dragon", &["large wings", "shimmering scales"]),
    ("knight", &["heavy plate armor", "scratched metallic shine"]),
    ("forest", &["morning mist", "tall bamboo"]),
    ("city", &["neon signs", "rain reflections"]),
];

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dimension: DEFAULT_MOCK_DIMENSION,
            judge_mode: MockJudgeMode::Symmetric,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    pub fn with_judge_mode(mut self, mode: MockJudgeMode) -> Self {
        self.judge_mode = mode;
        self
    }

    /// Parse `mock://<seed>[?dim=N&judge=coin|symmetric]`.
    pub fn from_endpoint(endpoint: &str) -> Result<Self, LlmError> {
        let rest = endpoint
            .strip_prefix("mock://")
            .ok_or_else(|| LlmError::Config(format!("not a mock endpoint: {endpoint}")))?;
        let (seed_part, query) = rest.split_once('?').unwrap_or((rest, ""));
        let seed_part = seed_part.trim_end_matches('/');
        let seed = if seed_part.is_empty() {
            0
        } else {
            seed_part
                .parse()
                .map_err(|_| LlmError::Config(format!("bad mock seed `{seed_part}`")))?
        };
        let mut mock = MockProvider::new(seed);
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
            match key {
                "dim" => {
                    let dim: usize = value
                        .parse()
                        .map_err(|_| LlmError::Config(format!("bad mock dim `{value}`")))?;
                    mock = mock.with_dimension(dim);
                }
                "judge" => {
                    mock = mock.with_judge_mode(match value {
                        "coin" => MockJudgeMode::Coin,
                        "symmetric" => MockJudgeMode::Symmetric,
                        other => {
                            return Err(LlmError::Config(format!("bad mock judge `{other}`")))
                        }
                    })
                }
                other => return Err(LlmError::Config(format!("unknown mock option `{other}`"))),
            }
        }
        Ok(mock)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn decompose(&self, prompt: &str) -> String {
        let words: Vec<String> = prompt
            .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut segments: Vec<Vec<&str>> = vec![Vec::new()];
        for word in &words {
            let is_connector = CONNECTORS.contains(&word.as_str())
                || (word.len() > 4 && word.ends_with("ing"));
            if is_connector {
                if !segments.last().expect("non-empty").is_empty() {
                    segments.push(Vec::new());
                }
            } else if !DETERMINERS.contains(&word.as_str()) {
                segments.last_mut().expect("non-empty").push(word);
            }
        }
        let mut names: Vec<String> = segments
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.join(" "))
            .collect();
        if names.is_empty() {
            names.push(prompt.trim().to_lowercase());
        }
        let concept = |name: &str| format!("{{'name': '{}', 'styles': [], 'details': []}}", name.replace('\'', "\\'"));
        let support: Vec<String> = names[1..].iter().map(|n| concept(n)).collect();
        format!(
            "{{'main': {}, 'support': [{}], 'image': {{'styles': [], 'details': []}}}}",
            concept(&names[0]),
            support.join(", ")
        )
    }

    fn details(&self, n: usize, concept: &str) -> String {
        let mut picked: Vec<&str> = Vec::with_capacity(n);
        let lowered = concept.to_lowercase();
        let words: Vec<&str> = lowered.split(|c: char| !c.is_alphanumeric()).collect();
        for (keyword, fragments) in THEMED_DETAILS {
            if words.contains(keyword) {
                for fragment in *fragments {
                    if picked.len() < n && !picked.contains(fragment) {
                        picked.push(fragment);
                    }
                }
            }
        }
        let fresh = DETAIL_VOCABULARY.iter().filter(|f| !picked.contains(f)).count();
        let cap = n.min(picked.len() + fresh);
        let mut counter = 0u64;
        while picked.len() < cap {
            let h = stable_hash([
                &self.seed.to_le_bytes()[..],
                concept.as_bytes(),
                &counter.to_le_bytes()[..],
            ]);
            let fragment = DETAIL_VOCABULARY[(h % DETAIL_VOCABULARY.len() as u64) as usize];
            if !picked.contains(&fragment) {
                picked.push(fragment);
            }
            counter += 1;
        }
        picked.join(", ")
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        let dim = self.dimension as u64;
        let mut add = |feature: &str, weight: f32| {
            let h = stable_hash(["feature".as_bytes(), feature.as_bytes()]);
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[(h % dim) as usize] += sign * weight;
        };
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            if STOPWORDS.contains(&word.as_str()) {
                continue;
            }
            add(&word, 1.0);
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for tri in padded.windows(3) {
                add(&tri.iter().collect::<String>(), 0.35);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    fn set_score(&self, prompt: &str, images: &[GeneratedImage]) -> u64 {
        let mut parts: Vec<&[u8]> = vec![prompt.as_bytes()];
        parts.extend(images.iter().map(|img| img.bytes.as_slice()));
        let seed = self.seed.to_le_bytes();
        parts.push(&seed);
        stable_hash(parts)
    }
}

/// Extract the integer following `a list of ` in a detail-enhancement prompt.
fn requested_count(prompt: &str) -> Option<usize> {
    let idx = prompt.find("a list of ")?;
    let digits: String = prompt[idx + "a list of ".len()..]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

impl Provider for MockProvider {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if let Some(idx) = prompt.rfind("Image prompt:") {
            return Ok(self.decompose(&prompt[idx + "Image prompt:".len()..]));
        }
        if prompt.contains("extremely specific details") {
            if let Some(idx) = prompt.rfind("Concept:") {
                let concept = prompt[idx + "Concept:".len()..].trim();
                let n = requested_count(prompt).unwrap_or(5);
                return Ok(self.details(n, concept));
            }
        }
        let h = stable_hash([&self.seed.to_le_bytes()[..], prompt.as_bytes()]);
        Ok(format!("mock reply {}", hex8(h)))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn judge(
        &self,
        prompt: &str,
        images_a: &[GeneratedImage],
        images_b: &[GeneratedImage],
    ) -> Result<String, LlmError> {
        let winner = match self.judge_mode {
            MockJudgeMode::Symmetric => {
                if self.set_score(prompt, images_a) >= self.set_score(prompt, images_b) {
                    'A'
                } else {
                    'B'
                }
            }
            MockJudgeMode::Coin => {
                let a = self.set_score(prompt, images_a).to_le_bytes();
                let b = self.set_score(prompt, images_b).to_le_bytes();
                if stable_hash([&a[..], &b[..]]) & 1 == 0 {
                    'A'
                } else {
                    'B'
                }
            }
        };
        Ok(format!(
            "Compared {} images against {} images.\nWINNER: {winner}",
            images_a.len(),
            images_b.len()
        ))
    }
}
