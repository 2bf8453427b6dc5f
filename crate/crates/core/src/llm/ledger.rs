use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Running count of completion and embedding tokens against an optional
/// budget. Counters only ever grow and may be charged from many threads.
#[derive(Debug, Default)]
pub struct TokenLedger {
    completion: AtomicU64,
    embedding: AtomicU64,
    budget: Option<u64>,
}

/// A point-in-time copy of a [`TokenLedger`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub completion_tokens: u64,
    pub embedding_tokens: u64,
    pub budget: Option<u64>,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.completion_tokens + self.embedding_tokens
    }

    /// Tokens charged between `earlier` and `self`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
            embedding_tokens: self.embedding_tokens - earlier.embedding_tokens,
            budget: self.budget,
        }
    }
}

impl TokenLedger {
    /// `budget` of zero is treated as "no budget".
    pub fn new(budget: Option<u64>) -> Self {
        Self {
            budget: budget.filter(|&b| b > 0),
            ..Default::default()
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion.load(Ordering::SeqCst)
    }

    pub fn embedding_tokens(&self) -> u64 {
        self.embedding.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> u64 {
        self.completion_tokens() + self.embedding_tokens()
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.total()))
    }

    /// Fails when the ledger is already at budget or when `projected`
    /// more tokens would overflow it.
    pub fn check(&self, projected: u64) -> Result<(), LlmError> {
        if let Some(budget) = self.budget {
            let used = self.total();
            if used >= budget || used + projected > budget {
                return Err(LlmError::BudgetExceeded {
                    used,
                    projected,
                    budget,
                });
            }
        }
        Ok(())
    }

    pub fn charge_completion(&self, tokens: u64) {
        self.completion.fetch_add(tokens, Ordering::SeqCst);
    }

    pub fn charge_embedding(&self, tokens: u64) {
        self.embedding.fetch_add(tokens, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            completion_tokens: self.completion_tokens(),
            embedding_tokens: self.embedding_tokens(),
            budget: self.budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn budget_checks_are_pre_dispatch() {
        let ledger = TokenLedger::new(Some(10));
        ledger.check(10).unwrap();
        assert!(ledger.check(11).is_err());
        ledger.charge_completion(10);
        assert!(matches!(ledger.check(0), Err(LlmError::BudgetExceeded { .. })));
        assert_eq!(ledger.remaining(), Some(0));
    }

    #[test]
    fn concurrent_charges_are_conserved() {
        let ledger = Arc::new(TokenLedger::unlimited());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let ledger = Arc::clone(&ledger);
                std::thread::spawn(move || {
                    for _ in 0..1000 {
                        ledger.charge_completion(1);
                        ledger.charge_embedding(i);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(ledger.completion_tokens(), 8000);
        assert_eq!(ledger.embedding_tokens(), 1000 * (0..8).sum::<u64>());
    }
}
