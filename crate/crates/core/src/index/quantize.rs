//! Symmetric per-vector INT8 scalar quantization.
//!
//! `scale = max|v| / 127` (1 for the zero vector) and
//! `code = round_half_away(v / scale)` clamped to `[-127, 127]`, so the
//! reconstruction error per component is at most `scale / 2`.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::scalar::Scalar;

use super::IndexError;

pub const CODE_MAX: i8 = 127;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct QuantizedVector<T: Scalar> {
    codes: Vec<i8>,
    scale: T,
}

impl<T: Scalar> QuantizedVector<T> {
    pub fn from_parts(codes: Vec<i8>, scale: T) -> Result<Self, IndexError> {
        if codes.is_empty() {
            return Err(IndexError::InvalidVector("no codes".into()));
        }
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(IndexError::InvalidVector(format!("scale {scale} is not positive")));
        }
        if codes.contains(&i8::MIN) {
            return Err(IndexError::InvalidVector("code -128 is outside the symmetric range".into()));
        }
        Ok(Self { codes, scale })
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn dimension(&self) -> usize {
        self.codes.len()
    }

    pub fn dequantize(&self) -> EmbeddingVector<T> {
        EmbeddingVector::new(self.dequantized_values()).expect("finite codes and scale")
    }

    pub(crate) fn dequantized_values(&self) -> Vec<T> {
        self.codes
            .iter()
            .map(|&c| T::lit(f64::from(c)) * self.scale)
            .collect()
    }
}

pub fn quantize<T: Scalar>(v: &EmbeddingVector<T>) -> QuantizedVector<T> {
    quantize_slice(v.values()).expect("embedding vectors are finite and non-empty")
}

pub fn quantize_slice<T: Scalar>(values: &[T]) -> Result<QuantizedVector<T>, IndexError> {
    if values.is_empty() {
        return Err(IndexError::InvalidVector("empty vector".into()));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(IndexError::NonFiniteInput { index });
    }
    let max_abs = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let limit = T::lit(f64::from(CODE_MAX));
    let scale = if max_abs > T::zero() { max_abs / limit } else { T::one() };
    let codes = values
        .iter()
        .map(|&v| {
            // `round` is half-away-from-zero.
            let q = (v / scale).round().max(-limit).min(limit);
            q.to_i8().expect("clamped to i8 range")
        })
        .collect();
    Ok(QuantizedVector { codes, scale })
}
