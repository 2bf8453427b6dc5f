use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::linalg::SquareMatrix;
use super::EvalError;

/// Added to both covariance diagonals before taking square roots.
pub const FRECHET_JITTER: f64 = 1e-6;

/// Feature vectors of equal dimension; at least two so covariance exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>", bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct FeatureSet<T: Scalar> {
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> TryFrom<Vec<Vec<T>>> for FeatureSet<T> {
    type Error = EvalError;

    fn try_from(vectors: Vec<Vec<T>>) -> Result<Self, EvalError> {
        Self::new(vectors)
    }
}

impl<T: Scalar> From<FeatureSet<T>> for Vec<Vec<T>> {
    fn from(set: FeatureSet<T>) -> Self {
        set.vectors
    }
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(vectors: Vec<Vec<T>>) -> Result<Self, EvalError> {
        if vectors.len() < 2 {
            return Err(EvalError::TooFewSamples(vectors.len()));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(EvalError::InvalidFeatures("zero-dimensional vectors".into()));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(EvalError::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EvalError::InvalidFeatures("non-finite component".into()));
            }
        }
        Ok(Self { vectors })
    }

    pub fn dimension(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn mean(&self) -> Vec<T> {
        let n = T::from_usize(self.len()).expect("count fits");
        let mut mean = vec![T::zero(); self.dimension()];
        for v in &self.vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += *x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Unbiased sample covariance (divides by n − 1).
    pub fn covariance(&self) -> SquareMatrix<T> {
        let d = self.dimension();
        let mean = self.mean();
        let mut cov = SquareMatrix::zeros(d);
        for v in &self.vectors {
            for i in 0..d {
                let di = v[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += di * (v[j] - mean[j]);
                }
            }
        }
        let denom = T::from_usize(self.len() - 1).expect("count fits");
        for i in 0..d {
            for j in i..d {
                let c = cov[(i, j)] / denom;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        cov
    }

    pub fn merged(&self, other: &FeatureSet<T>) -> Result<FeatureSet<T>, EvalError> {
        if other.dimension() != self.dimension() {
            return Err(EvalError::DimensionMismatch {
                expected: self.dimension(),
                actual: other.dimension(),
            });
        }
        let mut vectors = self.vectors.clone();
        vectors.extend(other.vectors.iter().cloned());
        Ok(Self { vectors })
    }
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^½)`, clamped at zero.
///
/// The trace of `(Σa Σb)^½` is taken as the trace of the symmetric matrix
/// `(Σa^½ Σb Σa^½)^½`, which has the same eigenvalues.
pub fn frechet_distance<T: Scalar>(a: &FeatureSet<T>, b: &FeatureSet<T>) -> Result<T, EvalError> {
    if a.dimension() != b.dimension() {
        return Err(EvalError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let jitter = T::lit(FRECHET_JITTER);
    let mean_term = a
        .mean()
        .iter()
        .zip(b.mean())
        .fold(T::zero(), |acc, (x, y)| acc + (*x - y) * (*x - y));
    let mut cov_a = a.covariance();
    let mut cov_b = b.covariance();
    cov_a.add_diagonal(jitter);
    cov_b.add_diagonal(jitter);
    let root_a = cov_a.sym_sqrt();
    let inner = root_a.matmul(&cov_b).matmul(&root_a).symmetrized();
    let cross = inner.sym_sqrt().trace();
    let d = mean_term + cov_a.trace() + cov_b.trace() - T::lit(2.0) * cross;
    Ok(d.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_one_dimension() {
        let a = FeatureSet::new(vec![vec![-1.0f64], vec![0.0], vec![1.0]]).unwrap();
        let b = FeatureSet::new(vec![vec![0.0f64], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(a.mean(), vec![0.0]);
        assert_eq!(a.covariance()[(0, 0)], 1.0);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(matches!(FeatureSet::new(vec![vec![1.0f64]]), Err(EvalError::TooFewSamples(1))));
        assert!(FeatureSet::new(vec![vec![1.0f64], vec![1.0, 2.0]]).is_err());
        assert!(FeatureSet::new(vec![vec![f64::NAN], vec![1.0]]).is_err());
        let a = FeatureSet::new(vec![vec![1.0f64], vec![2.0]]).unwrap();
        let b = FeatureSet::new(vec![vec![1.0f64, 0.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(frechet_distance(&a, &b), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn works_in_single_precision() {
        let a = FeatureSet::new(vec![vec![0.0f32, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert!(frechet_distance(&a, &a).unwrap() < 1e-3);
    }

    #[test]
    fn serde_validates() {
        assert!(serde_json::from_str::<FeatureSet<f64>>("[[1.0]]").is_err());
        let set: FeatureSet<f64> = serde_json::from_str("[[1.0],[2.0]]").unwrap();
        assert_eq!(set.len(), 2);
    }
}
