use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LlmError;

const JUDGE_TEMPLATE: &str = include_str!("../../assets/judge.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Diversity,
    Quality,
    Alignment,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Diversity, Criterion::Quality, Criterion::Alignment];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Diversity => "diversity",
            Criterion::Quality => "quality",
            Criterion::Alignment => "alignment",
        }
    }

    fn rubric(self) -> &'static str {
        match self {
            Criterion::Diversity => {
                "Prefer the set whose images vary more in content, composition, style and theme."
            }
            Criterion::Quality => {
                "Prefer the set containing the best-looking images: sharp, coherent, free of anatomical or rendering defects."
            }
            Criterion::Alignment => {
                "Prefer the set whose images depict every part of the prompt most faithfully."
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diversity" => Ok(Criterion::Diversity),
            "quality" | "image quality" => Ok(Criterion::Quality),
            "alignment" => Ok(Criterion::Alignment),
            other => Err(format!("unknown criterion `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

impl Winner {
    pub fn flipped(self) -> Winner {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub criterion: Criterion,
    pub winner: Winner,
    pub rationale: String,
}

pub fn render_judge_prompt(criterion: Criterion, prompt: &str, count_a: usize, count_b: usize) -> String {
    JUDGE_TEMPLATE
        .replace("{prompt}", prompt)
        .replace("{criterion}", criterion.as_str())
        .replace("{rubric}", criterion.rubric())
        .replace("{count_a}", &count_a.to_string())
        .replace("{count_b}", &count_b.to_string())
}

/// Reads the last `WINNER: A|B` line; everything before it is the rationale.
pub fn parse_verdict(criterion: Criterion, response: &str) -> Result<JudgeVerdict, LlmError> {
    let lines: Vec<&str> = response.lines().collect();
    for (idx, line) in lines.iter().enumerate().rev() {
        let trimmed = line.trim().trim_matches(|c| c == '*' || c == '`');
        let Some(pos) = trimmed.to_ascii_uppercase().find("WINNER:") else {
            continue;
        };
        let rest = trimmed[pos + "WINNER:".len()..].trim_start();
        let winner = match rest.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('A') => Winner::A,
            Some('B') => Winner::B,
            _ => continue,
        };
        let mut rationale = lines[..idx].join("\n").trim().to_string();
        if rationale.is_empty() {
            rationale = rest[1..].trim().to_string();
        }
        return Ok(JudgeVerdict {
            criterion,
            winner,
            rationale,
        });
    }
    Err(LlmError::UnparseableVerdict(truncate(response, 120)))
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_last_winner_line() {
        let v = parse_verdict(Criterion::Quality, "WINNER: B ... sharper").unwrap();
        assert_eq!(v.winner, Winner::B);
        let v = parse_verdict(
            Criterion::Diversity,
            "Set A is varied.\nWINNER: B (draft)\nOn reflection:\n**WINNER: A**",
        )
        .unwrap();
        assert_eq!(v.winner, Winner::A);
        assert!(v.rationale.contains("On reflection"));
    }

    #[test]
    fn missing_winner_is_unparseable() {
        assert!(matches!(
            parse_verdict(Criterion::Alignment, "both are fine"),
            Err(LlmError::UnparseableVerdict(_))
        ));
        assert!(parse_verdict(Criterion::Alignment, "WINNER: C").is_err());
    }

    #[test]
    fn prompt_mentions_criterion_and_format() {
        let p = render_judge_prompt(Criterion::Diversity, "a cat", 3, 3);
        assert!(p.contains("Criterion: diversity"));
        assert!(p.contains("WINNER: A"));
        assert!(p.contains("Prompt: a cat"));
    }

    #[test]
    fn criterion_round_trips_through_str() {
        for c in Criterion::ALL {
            assert_eq!(c.as_str().parse::<Criterion>().unwrap(), c);
        }
    }
}
