use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::frechet::{frechet_distance, FeatureSet};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStep {
    pub index: usize,
    pub distance: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionOutcome<T: Scalar> {
    pub accepted: Vec<usize>,
    pub trace: Vec<ExpansionStep>,
    /// The reference set with every accepted batch merged in.
    pub reference: FeatureSet<T>,
}

/// Walk `batches` in order and admit each one whose Fréchet distance to the
/// current reference is below `threshold`. Admitted batches join the
/// reference, so later decisions depend on earlier ones.
pub fn synthetic_expand<T: Scalar>(
    reference: &FeatureSet<T>,
    batches: &[FeatureSet<T>],
    threshold: f64,
) -> Result<ExpansionOutcome<T>, EvalError> {
    let mut current = reference.clone();
    let mut accepted = Vec::new();
    let mut trace = Vec::with_capacity(batches.len());
    for (index, batch) in batches.iter().enumerate() {
        let distance = frechet_distance(&current, batch)?.as_f64();
        let admit = distance < threshold;
        if admit {
            current = current.merged(batch)?;
            accepted.push(index);
        }
        trace.push(ExpansionStep {
            index,
            distance,
            accepted: admit,
        });
    }
    Ok(ExpansionOutcome {
        accepted,
        trace,
        reference: current,
    })
}
