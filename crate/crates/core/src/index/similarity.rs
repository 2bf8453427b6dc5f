use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::scalar::Scalar;

use super::IndexError;

/// Cosine similarity clamped to [-1, 1]; a zero vector scores 0 against anything.
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, IndexError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return Ok(T::zero());
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).max(-T::one()).min(T::one()))
}

/// Triplet context score of one document against a query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletScore<T> {
    /// Sum of the negative parts of the per-positive margins; always ≤ 0.
    pub context: T,
    /// Sum of the per-positive margins.
    pub margin_sum: T,
    /// Mean cosine to the positives.
    pub positive_similarity: T,
}

/// For each positive `i`, `m_i = cos(doc, pos_i) − cos(doc, neg)`;
/// `context = Σ min(m_i, 0)` and `margin_sum = Σ m_i`.
pub fn triplet_context<T: Scalar>(
    doc: &EmbeddingVector<T>,
    positives: &[EmbeddingVector<T>],
    negative: &EmbeddingVector<T>,
) -> Result<TripletScore<T>, IndexError> {
    triplet_slices(doc.values(), positives, negative)
}

pub(crate) fn triplet_slices<T: Scalar>(
    doc: &[T],
    positives: &[EmbeddingVector<T>],
    negative: &EmbeddingVector<T>,
) -> Result<TripletScore<T>, IndexError> {
    if positives.is_empty() {
        return Err(IndexError::NoPositives);
    }
    let negative_sim = cosine_slices(doc, negative.values())?;
    let mut context = T::zero();
    let mut margin_sum = T::zero();
    let mut positive_sum = T::zero();
    for positive in positives {
        let sim = cosine_slices(doc, positive.values())?;
        let margin = sim - negative_sim;
        context += margin.min(T::zero());
        margin_sum += margin;
        positive_sum += sim;
    }
    if context == T::zero() {
        // normalize -0.0
        context = T::zero();
    }
    Ok(TripletScore {
        context,
        margin_sum,
        positive_similarity: positive_sum / T::lit(positives.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    /// Unit vector in the plane making cosine `c` with [1, 0].
    fn at_cos(c: f64) -> EmbeddingVector<f64> {
        ev(&[c, (1.0 - c * c).sqrt()])
    }

    #[test]
    fn cosine_basics() {
        let v = ev(&[0.3, -1.2, 2.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &v.negated()).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&ev(&[1.0]), &ev(&[1.0, 0.0])),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn positives_equal_to_negative_score_zero() {
        let doc = ev(&[0.2, 0.9, -0.1]);
        let neg = ev(&[1.0, 0.5, 0.5]);
        let s = triplet_context(&doc, &[neg.clone(), neg.clone()], &neg).unwrap();
        assert_eq!(s.context, 0.0);
        assert_eq!(s.margin_sum, 0.0);
    }

    #[test]
    fn single_positive_margin() {
        let doc = ev(&[1.0, 0.0]);
        let s = triplet_context(&doc, &[at_cos(0.9)], &at_cos(0.4)).unwrap();
        assert_eq!(s.context, 0.0);
        assert!((s.margin_sum - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixed_margins() {
        // margins +0.2 and -0.4 against a negative at cos 0.5
        let doc = ev(&[1.0, 0.0]);
        let s = triplet_context(&doc, &[at_cos(0.7), at_cos(0.1)], &at_cos(0.5)).unwrap();
        assert!((s.context + 0.4).abs() < 1e-12);
        assert!((s.margin_sum + 0.2).abs() < 1e-12);
    }

    #[test]
    fn needs_a_positive() {
        let doc = ev(&[1.0]);
        assert_eq!(triplet_context(&doc, &[], &doc).unwrap_err(), IndexError::NoPositives);
    }

    proptest! {
        #[test]
        fn context_never_positive(
            doc in proptest::collection::vec(-1.0f64..1.0, 8),
            pos in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 8), 1..5),
            neg in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let pos: Vec<_> = pos.iter().map(|p| ev(p)).collect();
            let s = triplet_context(&ev(&doc), &pos, &ev(&neg)).unwrap();
            prop_assert!(s.context <= 0.0);
            prop_assert!(s.context <= s.margin_sum.min(0.0) + 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s.positive_similarity));
        }

        #[test]
        fn cosine_in_range_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
            k in 0.01f64..100.0,
        ) {
            let c = cosine(&ev(&a), &ev(&b)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            let scaled = cosine(&ev(&a).scaled(k), &ev(&b)).unwrap();
            prop_assert!((c - scaled).abs() < 1e-9);
        }
    }
}
