use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::scalar::Scalar;

use super::quantize::{quantize, QuantizedVector};
use super::similarity::triplet_slices;
use super::{DocKind, DocumentRecord, IndexError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct IndexedDocument<T: Scalar> {
    pub record: DocumentRecord,
    pub vector: QuantizedVector<T>,
}

/// One scored document returned by [`Collection::rank`] or [`Collection::search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ScoredHit<T: Scalar> {
    pub record: DocumentRecord,
    pub context: T,
    pub margin_sum: T,
    pub positive_similarity: T,
}

impl<T: Scalar> ScoredHit<T> {
    /// Zero hinge penalty and a margin sum at or above `threshold`.
    pub fn passes(&self, threshold: f64) -> bool {
        self.context == T::zero() && self.margin_sum.as_f64() >= threshold
    }
}

/// `(context desc, margin_sum desc, id asc)`.
pub fn rank_order<T: Scalar>(a: &ScoredHit<T>, b: &ScoredHit<T>) -> Ordering {
    b.context
        .partial_cmp(&a.context)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.margin_sum.partial_cmp(&a.margin_sum).unwrap_or(Ordering::Equal))
        .then_with(|| a.record.id.cmp(&b.record.id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub name: String,
    pub kind: DocKind,
    pub dimension: usize,
    pub count: usize,
}

/// An immutable set of quantized documents of one kind and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection<T: Scalar> {
    name: String,
    kind: DocKind,
    dimension: usize,
    documents: Vec<IndexedDocument<T>>,
}

/// Single-writer builder enforcing unique ids, one kind and one dimension.
#[derive(Debug)]
pub struct CollectionBuilder<T: Scalar> {
    inner: Collection<T>,
    ids: HashSet<String>,
}

impl<T: Scalar> CollectionBuilder<T> {
    pub fn new(name: impl Into<String>, kind: DocKind, dimension: usize) -> Self {
        Self {
            inner: Collection {
                name: name.into(),
                kind,
                dimension,
                documents: Vec::new(),
            },
            ids: HashSet::new(),
        }
    }

    pub fn add_embedding(
        &mut self,
        record: DocumentRecord,
        embedding: &EmbeddingVector<T>,
    ) -> Result<&mut Self, IndexError> {
        self.add_quantized(record, quantize(embedding))
    }

    pub fn add_quantized(
        &mut self,
        record: DocumentRecord,
        vector: QuantizedVector<T>,
    ) -> Result<&mut Self, IndexError> {
        record.validate()?;
        if record.kind != self.inner.kind {
            return Err(IndexError::KindMismatch {
                id: record.id,
                expected: self.inner.kind,
                found: record.kind,
            });
        }
        if vector.dimension() != self.inner.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.inner.dimension,
                actual: vector.dimension(),
            });
        }
        if !self.ids.insert(record.id.clone()) {
            return Err(IndexError::DuplicateId(record.id));
        }
        self.inner.documents.push(IndexedDocument { record, vector });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inner.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.documents.is_empty()
    }

    pub fn build(self) -> Result<Collection<T>, IndexError> {
        if self.inner.dimension == 0 {
            return Err(IndexError::InvalidVector("dimension must be positive".into()));
        }
        Ok(self.inner)
    }
}

impl<T: Scalar> Collection<T> {
    pub fn builder(name: impl Into<String>, kind: DocKind, dimension: usize) -> CollectionBuilder<T> {
        CollectionBuilder::new(name, kind, dimension)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> DocKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[IndexedDocument<T>] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&IndexedDocument<T>> {
        self.documents.iter().find(|d| d.record.id == id)
    }

    pub fn stats(&self) -> CollectionStats {
        CollectionStats {
            name: self.name.clone(),
            kind: self.kind,
            dimension: self.dimension,
            count: self.documents.len(),
        }
    }

    fn check_queries(
        &self,
        positives: &[EmbeddingVector<T>],
        negative: &EmbeddingVector<T>,
    ) -> Result<(), IndexError> {
        if positives.is_empty() {
            return Err(IndexError::NoPositives);
        }
        for q in positives.iter().chain(std::iter::once(negative)) {
            if q.dimension() != self.dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dimension,
                    actual: q.dimension(),
                });
            }
        }
        Ok(())
    }

    /// Score every document on its dequantized vector and sort by rank order.
    pub fn rank(
        &self,
        positives: &[EmbeddingVector<T>],
        negative: &EmbeddingVector<T>,
    ) -> Result<Vec<ScoredHit<T>>, IndexError> {
        self.check_queries(positives, negative)?;
        let mut hits = self
            .documents
            .iter()
            .map(|doc| {
                let values = doc.vector.dequantized_values();
                let score = triplet_slices(&values, positives, negative)?;
                Ok(ScoredHit {
                    record: doc.record.clone(),
                    context: score.context,
                    margin_sum: score.margin_sum,
                    positive_similarity: score.positive_similarity,
                })
            })
            .collect::<Result<Vec<_>, IndexError>>()?;
        hits.sort_by(rank_order);
        Ok(hits)
    }

    /// Up to `k` hits that pass `threshold` (zero context and
    /// `margin_sum ≥ threshold`), in rank order. When nothing passes, the
    /// top `k` ranked hits are returned instead and gating is left to the caller.
    pub fn search(
        &self,
        positives: &[EmbeddingVector<T>],
        negative: &EmbeddingVector<T>,
        k: usize,
        threshold: f64,
    ) -> Result<Vec<ScoredHit<T>>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.documents.is_empty() {
            return Err(IndexError::EmptyCollection);
        }
        let ranked = self.rank(positives, negative)?;
        let passing: Vec<_> = ranked.iter().filter(|h| h.passes(threshold)).take(k).cloned().collect();
        if passing.is_empty() {
            Ok(ranked.into_iter().take(k).collect())
        } else {
            Ok(passing)
        }
    }

    pub(crate) fn from_parts(
        name: String,
        kind: DocKind,
        dimension: usize,
        documents: Vec<IndexedDocument<T>>,
    ) -> Result<Self, IndexError> {
        let mut builder = CollectionBuilder::new(name, kind, dimension);
        for doc in documents {
            builder.add_quantized(doc.record, doc.vector)?;
        }
        builder.build()
    }
}
