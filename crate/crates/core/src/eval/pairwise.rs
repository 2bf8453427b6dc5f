use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::GeneratedImage;
use crate::llm::{Criterion, Gateway, JudgeVerdict, TokenLedger, Winner};

use super::EvalError;

/// Something that turns a prompt into images, charging its own ledger.
pub trait ImageSource: Sync {
    fn label(&self) -> &str;
    fn generate(&self, prompt: &str, ledger: &TokenLedger) -> Result<Vec<GeneratedImage>, String>;
}

/// Fraction of `criterion` verdicts won by system A.
pub fn win_rate(verdicts: &[JudgeVerdict], criterion: Criterion) -> Result<f64, EvalError> {
    let relevant: Vec<_> = verdicts.iter().filter(|v| v.criterion == criterion).collect();
    if relevant.is_empty() {
        return Err(EvalError::NoVerdicts(criterion));
    }
    let wins = relevant.iter().filter(|v| v.winner == Winner::A).count();
    Ok(wins as f64 / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Decided { winner: Winner },
    /// The two presentation orders disagreed.
    Inconsistent,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub criterion: Criterion,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEvaluation {
    pub prompt: String,
    pub failure: Option<String>,
    pub images_a: usize,
    pub images_b: usize,
    pub verdicts: Vec<CriterionVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub system_a: u64,
    pub system_b: u64,
    pub judge: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub criterion: Criterion,
    pub wins_a: usize,
    pub wins_b: usize,
    pub inconsistent: usize,
    pub failed: usize,
    /// Rates are over non-failed prompts; absent when every prompt failed.
    pub win_rate: Option<f64>,
    pub loss_rate: Option<f64>,
    pub inconsistent_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub prompt_set: Vec<String>,
    pub system_a: String,
    pub system_b: String,
    pub criteria: Vec<Criterion>,
    pub entries: Vec<PromptEvaluation>,
    pub token_totals: TokenTotals,
}

impl EvalRun {
    pub fn failed_prompts(&self) -> usize {
        self.entries.iter().filter(|e| e.failure.is_some()).count()
    }

    pub fn summary(&self) -> Vec<RateRow> {
        self.criteria
            .iter()
            .map(|&criterion| {
                let mut row = RateRow {
                    criterion,
                    wins_a: 0,
                    wins_b: 0,
                    inconsistent: 0,
                    failed: 0,
                    win_rate: None,
                    loss_rate: None,
                    inconsistent_rate: None,
                };
                for v in self.entries.iter().flat_map(|e| &e.verdicts).filter(|v| v.criterion == criterion) {
                    match &v.outcome {
                        Outcome::Decided { winner: Winner::A } => row.wins_a += 1,
                        Outcome::Decided { winner: Winner::B } => row.wins_b += 1,
                        Outcome::Inconsistent => row.inconsistent += 1,
                        Outcome::Failed { .. } => row.failed += 1,
                    }
                }
                let judged = row.wins_a + row.wins_b + row.inconsistent;
                if judged > 0 {
                    let n = judged as f64;
                    row.win_rate = Some(row.wins_a as f64 / n);
                    row.loss_rate = Some(row.wins_b as f64 / n);
                    row.inconsistent_rate = Some(row.inconsistent as f64 / n);
                }
                row
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "run": self,
            "summary": self.summary(),
        })
    }
}

fn judge_both_orders(
    judge: &Gateway,
    a: &[GeneratedImage],
    b: &[GeneratedImage],
    criterion: Criterion,
    prompt: &str,
    ledger: &TokenLedger,
) -> Outcome {
    let first = judge.judge_pair(a, b, criterion, prompt, ledger);
    let second = judge.judge_pair(b, a, criterion, prompt, ledger);
    match (first, second) {
        (Ok(x), Ok(y)) if x.winner == y.winner.flipped() => Outcome::Decided { winner: x.winner },
        (Ok(_), Ok(_)) => Outcome::Inconsistent,
        (Err(e), _) | (_, Err(e)) => Outcome::Failed { message: e.to_string() },
    }
}

/// Generate with both systems for every prompt and judge each criterion in
/// both presentation orders. A verdict counts only when the orders agree.
/// Generation failures mark the prompt failed and the run continues.
pub fn evaluate_pair(
    prompts: &[String],
    gen_a: &dyn ImageSource,
    gen_b: &dyn ImageSource,
    judge: &Gateway,
    criteria: &[Criterion],
    judge_ledger: &TokenLedger,
) -> EvalRun {
    let ledger_a = TokenLedger::unlimited();
    let ledger_b = TokenLedger::unlimited();
    let judge_before = judge_ledger.total();
    let mut entries = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let generated = gen_a
            .generate(prompt, &ledger_a)
            .map_err(|e| format!("{}: {e}", gen_a.label()))
            .and_then(|a| {
                gen_b
                    .generate(prompt, &ledger_b)
                    .map(|b| (a, b))
                    .map_err(|e| format!("{}: {e}", gen_b.label()))
            });
        let entry = match generated {
            Ok((a, b)) => PromptEvaluation {
                prompt: prompt.clone(),
                failure: None,
                images_a: a.len(),
                images_b: b.len(),
                verdicts: criteria
                    .iter()
                    .map(|&criterion| CriterionVerdict {
                        criterion,
                        outcome: judge_both_orders(judge, &a, &b, criterion, prompt, judge_ledger),
                    })
                    .collect(),
            },
            Err(message) => {
                warn!(%prompt, %message, "generation failed during evaluation");
                PromptEvaluation {
                    prompt: prompt.clone(),
                    failure: Some(message.clone()),
                    images_a: 0,
                    images_b: 0,
                    verdicts: criteria
                        .iter()
                        .map(|&criterion| CriterionVerdict {
                            criterion,
                            outcome: Outcome::Failed { message: message.clone() },
                        })
                        .collect(),
                }
            }
        };
        entries.push(entry);
    }
    EvalRun {
        prompt_set: prompts.to_vec(),
        system_a: gen_a.label().to_string(),
        system_b: gen_b.label().to_string(),
        criteria: criteria.to_vec(),
        entries,
        token_totals: TokenTotals {
            system_a: ledger_a.total(),
            system_b: ledger_b.total(),
            judge: judge_ledger.total() - judge_before,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemUsage {
    pub label: String,
    /// `(tokens, images)` per run.
    pub runs: Vec<(u64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub label: String,
    pub runs: usize,
    pub total_tokens: u64,
    pub total_images: usize,
    /// Absent when the system produced no images.
    pub mean_tokens_per_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub rows: Vec<TokenRow>,
    /// First row's mean over each later row's mean, keyed by label.
    pub ratios: BTreeMap<String, f64>,
}

pub fn token_report(systems: &[SystemUsage]) -> TokenReport {
    let rows: Vec<TokenRow> = systems
        .iter()
        .map(|s| {
            let total_tokens = s.runs.iter().map(|r| r.0).sum();
            let total_images = s.runs.iter().map(|r| r.1).sum();
            TokenRow {
                label: s.label.clone(),
                runs: s.runs.len(),
                total_tokens,
                total_images,
                mean_tokens_per_image: (total_images > 0).then(|| total_tokens as f64 / total_images as f64),
            }
        })
        .collect();
    let mut ratios = BTreeMap::new();
    if let Some(reference) = rows.first().and_then(|r| r.mean_tokens_per_image) {
        for row in &rows[1..] {
            if let Some(mean) = row.mean_tokens_per_image.filter(|m| *m > 0.0) {
                ratios.insert(row.label.clone(), reference / mean);
            }
        }
    }
    TokenReport { rows, ratios }
}
