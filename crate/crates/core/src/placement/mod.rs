//! Stage II: choosing `B` of the `M` candidate poses from statistical CSI.
//!
//! The objective is the ergodic sum-rate upper bound
//! `C(s) = sum_k log2(1 + p/sigma2 * sum_m s_m P[m,k])`, subject to exactly
//! `B` selections that are pairwise at least `d_min` apart.

mod baselines;
mod pso;

pub use baselines::{brute_force_select, ergodic_sum_rate_mc, rms_baseline, BRUTE_FORCE_LIMIT};
pub use pso::{fitness, pso_optimize, PsoConfig, PsoResult};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::PowerMatrix;
use crate::error::{Error, Result};

/// Binary selection over the candidate poses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionVector(pub Vec<u8>);

impl SelectionVector {
    pub fn from_indices(total: usize, indices: &[usize]) -> Self {
        let mut s = vec![0; total];
        for &i in indices {
            s[i] = 1;
        }
        Self(s)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Problem data shared by every selection method.
#[derive(Debug, Clone, Copy)]
pub struct SelectionProblem<'a> {
    pub power: &'a PowerMatrix,
    pub distances: &'a DMatrix<f64>,
    pub budget: usize,
    pub d_min: f64,
    /// Transmit power over noise power, `p / sigma2`.
    pub snr: f64,
}

impl SelectionProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let m = self.power.nrows();
        if self.distances.shape() != (m, m) {
            return Err(Error::ShapeMismatch("distance matrix must be M x M".into()));
        }
        if self.budget == 0 || self.budget > m {
            return Err(Error::InvalidArgument(format!(
                "cannot select {} of {m} poses",
                self.budget
            )));
        }
        if !(self.snr > 0.0) || !(self.d_min >= 0.0) {
            return Err(Error::InvalidArgument(
                "snr must be positive and d_min non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn rate(&self, indices: &[usize]) -> f64 {
        rate_of_indices(self.power, indices, self.snr)
    }

    pub fn conflicts(&self, indices: &[usize]) -> usize {
        conflicting_pairs(self.distances, indices, self.d_min)
    }

    pub fn is_feasible(&self, indices: &[usize]) -> bool {
        indices.len() == self.budget && self.conflicts(indices) == 0
    }
}

fn rate_of_indices(power: &PowerMatrix, indices: &[usize], snr: f64) -> f64 {
    (0..power.ncols())
        .map(|k| {
            let total: f64 = indices.iter().map(|&m| power.0[(m, k)]).sum();
            (snr * total).ln_1p()
        })
        .sum::<f64>()
        / std::f64::consts::LN_2
}

fn conflicting_pairs(distances: &DMatrix<f64>, indices: &[usize], d_min: f64) -> usize {
    let mut count = 0;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            if distances[(i, j)] < d_min {
                count += 1;
            }
        }
    }
    count
}

/// Ergodic sum-rate upper bound in bits/s/Hz.
pub fn sum_rate_upper(s: &SelectionVector, power: &PowerMatrix, p: f64, sigma2: f64) -> f64 {
    rate_of_indices(power, &s.indices(), p / sigma2)
}

/// Entrywise rounding of a relaxed selection.
pub fn round_selection(s: &[f64]) -> SelectionVector {
    SelectionVector(s.iter().map(|&v| u8::from(v >= 0.5)).collect())
}

/// Number of selected pairs closer than `d_min` plus the cardinality gap
/// `|B - 1^T s|`, both on the rounded selection.
pub fn penalty(s: &[f64], distances: &DMatrix<f64>, d_min: f64, budget: usize) -> f64 {
    let idx = round_selection(s).indices();
    conflicting_pairs(distances, &idx, d_min) as f64 + (budget as f64 - idx.len() as f64).abs()
}
