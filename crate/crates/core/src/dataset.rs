use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ragged replicate table: subject `i` has `m_i ≥ 1` proxies `W_ij ∈ R^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDataset {
    dim: usize,
    subjects: Vec<Vec<DVector<f64>>>,
}

impl ReplicateDataset {
    pub fn new(subjects: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        let first = subjects.iter().flat_map(|s| s.first()).next().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Data("zero-dimensional observations".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("subject {i} has no replicates")));
            }
            for w in s {
                if w.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: w.len() });
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("subject {i} has a non-finite value")));
                }
            }
        }
        Ok(Self { dim, subjects })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(Vec::len).sum()
    }

    pub fn subject(&self, i: usize) -> &[DVector<f64>] {
        &self.subjects[i]
    }

    pub fn subjects(&self) -> &[Vec<DVector<f64>>] {
        &self.subjects
    }

    pub fn replicate_counts(&self) -> Vec<usize> {
        self.subjects.iter().map(Vec::len).collect()
    }

    /// Subject index of every observation in flattened (subject-major) order.
    pub fn owners(&self) -> Vec<usize> {
        self.subjects.iter().enumerate().flat_map(|(i, s)| std::iter::repeat_n(i, s.len())).collect()
    }

    /// Subject means `W̄_i`.
    pub fn subject_means(&self) -> Vec<DVector<f64>> {
        self.subjects
            .iter()
            .map(|s| s.iter().fold(DVector::zeros(self.dim), |a, w| a + w) / s.len() as f64)
            .collect()
    }

    /// The `ℓ`-th coordinate of every replicate, per subject.
    pub fn column(&self, coord: usize) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.iter().map(|w| w[coord]).collect()).collect()
    }

    /// `[min W̄ − 0.1 range, max W̄ + 0.1 range]` per coordinate.
    pub fn inflated_ranges(&self) -> Vec<(f64, f64)> {
        let means = self.subject_means();
        (0..self.dim)
            .map(|d| {
                let (lo, hi) = means
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m[d]), hi.max(m[d])));
                let pad = 0.1 * (hi - lo);
                // Degenerate coordinates still need a nonempty interval.
                let pad = if pad > 0.0 { pad } else { 0.5 * hi.abs().max(1.0) };
                (lo - pad, hi + pad)
            })
            .collect()
    }
}
