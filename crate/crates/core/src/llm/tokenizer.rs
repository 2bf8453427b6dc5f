//! Token counting. The default tokenizer splits on Unicode whitespace so that
//! counts are machine independent; a subword tokenizer can be plugged in
//! through [`Tokenizer`].

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

/// Whitespace token count. Total over every input, lossy UTF-8 included.
pub fn count_tokens(text: &str) -> u64 {
    WhitespaceTokenizer.count(text)
}

pub fn count_tokens_bytes(bytes: &[u8]) -> u64 {
    count_tokens(&String::from_utf8_lossy(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_counts() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a b c"), 3);
        assert_eq!(count_tokens("  a\t\nb  "), 2);
    }

    proptest! {
        #[test]
        fn prefix_adds_one_token(t in ".*") {
            prop_assert_eq!(count_tokens(&format!("x {t}")), 1 + count_tokens(&t));
        }

        #[test]
        fn total_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = count_tokens_bytes(&bytes);
        }
    }
}
