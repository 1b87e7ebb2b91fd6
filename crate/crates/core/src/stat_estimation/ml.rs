//! Covariance-based maximum-likelihood power estimation by coordinate descent.
//!
//! With `Y = X diag(eta)^(1/2) G + W` and uncorrelated antennas, the columns
//! of `Y` are i.i.d. CN(0, Sigma) with `Sigma = X diag(eta) X^H + sigma2 I`.
//! The negative log-likelihood per antenna is
//! `ln det Sigma + tr(Sigma^-1 Sigma_hat)`. Each coordinate step minimizes it
//! over one `eta_k` in closed form and refreshes `Sigma^-1` with a rank-one
//! update.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_covariance, GroupAssignment, PilotMatrix, ReceivedBlock};
use crate::channel::C64;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Reference NLL via a Cholesky factorization of `Sigma`. O(L^3); meant for
/// checking the incremental bookkeeping.
pub fn nll(eta: &[f64], pilots: &PilotMatrix, sample_cov: &DMatrix<C64>, sigma2: f64) -> Result<f64> {
    let x = &pilots.0;
    let l = x.nrows();
    let weights = DVector::from_iterator(eta.len(), eta.iter().map(|&e| C64::from(e)));
    let mut sigma = x * DMatrix::from_diagonal(&weights) * x.adjoint();
    for i in 0..l {
        sigma[(i, i)] += C64::from(sigma2);
    }
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
    let trace = chol.solve(sample_cov).trace().re;
    Ok(logdet + trace)
}

/// Coordinate-descent state for one pose.
#[derive(Debug, Clone)]
pub struct MlState {
    pub eta: Vec<f64>,
    /// Maintained `Sigma^-1`.
    pub sigma_inv: DMatrix<C64>,
    /// Tracked NLL of the current `eta`.
    pub nll: f64,
}

impl MlState {
    /// `eta = 0`, `Sigma^-1 = I / sigma2`.
    pub fn new(users: usize, sample_cov: &DMatrix<C64>, sigma2: f64) -> Self {
        let l = sample_cov.nrows();
        Self {
            eta: vec![0.0; users],
            sigma_inv: DMatrix::identity(l, l).unscale(sigma2),
            nll: l as f64 * sigma2.ln() + sample_cov.trace().re / sigma2,
        }
    }
}

/// The scalars `c = x^H Sigma^-1 x` and `b = x^H Sigma^-1 Sigma_hat Sigma^-1 x`
/// plus `a = Sigma^-1 x`.
fn quadratic_terms(state: &MlState, x_k: &DVector<C64>, sample_cov: &DMatrix<C64>) -> (DVector<C64>, f64, f64) {
    let a = &state.sigma_inv * x_k;
    let c = x_k.dotc(&a).re;
    let b = a.dotc(&(sample_cov * &a)).re;
    (a, c, b)
}

/// Unconstrained minimizer of the one-dimensional objective, `(b - c) / c^2`.
pub fn nu_star(state: &MlState, x_k: &DVector<C64>, sample_cov: &DMatrix<C64>) -> f64 {
    let (_, c, b) = quadratic_terms(state, x_k, sample_cov);
    (b - c) / (c * c)
}

/// Change of the NLL when `eta_k` moves by `nu`:
/// `ln(1 + nu c) - nu b / (1 + nu c)`, defined for `nu > -1/c`.
pub fn nu_objective(state: &MlState, x_k: &DVector<C64>, sample_cov: &DMatrix<C64>, nu: f64) -> f64 {
    let (_, c, b) = quadratic_terms(state, x_k, sample_cov);
    let d = 1.0 + nu * c;
    d.ln() - nu * b / d
}

/// One clamped coordinate step on user `k`. Returns the applied step.
/// Costs O(L^2).
pub fn coordinate_update(state: &mut MlState, k: usize, x_k: &DVector<C64>, sample_cov: &DMatrix<C64>) -> f64 {
    let (a, c, b) = quadratic_terms(state, x_k, sample_cov);
    if !(c > 0.0) {
        return 0.0;
    }
    let nu = ((b - c) / (c * c)).max(-state.eta[k]);
    if nu == 0.0 {
        return 0.0;
    }
    let d = 1.0 + nu * c;
    state.eta[k] = (state.eta[k] + nu).max(0.0);
    // Sherman-Morrison: (S + nu x x^H)^-1 = S^-1 - nu a a^H / (1 + nu c)
    state
        .sigma_inv
        .ger(C64::from(-nu / d), &a, &a.conjugate(), C64::from(1.0));
    state.nll += d.ln() - nu * b / d;
    nu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JdcConfig {
    /// Sweeps over all users per pose.
    pub iterations: usize,
    /// Detection threshold on `N * eta`.
    pub epsilon: f64,
    /// Noise power assumed by the estimator.
    pub sigma2: f64,
    /// Seed of the coordinate schedule.
    pub seed: u64,
}

impl JdcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.epsilon > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument(
                "need iterations >= 1, epsilon > 0 and sigma2 > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Estimate at one sampled pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: usize,
    /// Per-antenna powers.
    pub eta: Vec<f64>,
    /// Channel powers `N * eta`, comparable with the power matrix.
    pub power: Vec<f64>,
    pub detected: Vec<u8>,
    pub nll: f64,
    pub updates: usize,
}

/// Runs `iterations` sweeps, each over a fresh random ordering of the users.
/// The ordering is drawn from a stream keyed by the pose index, so the result
/// does not depend on which group the pose belongs to.
pub fn estimate_pose(pilots: &PilotMatrix, block: &ReceivedBlock, config: &JdcConfig) -> Result<PoseEstimate> {
    config.validate()?;
    if block.y.nrows() != pilots.length() {
        return Err(Error::ShapeMismatch(format!(
            "block has {} pilot symbols, pilots have {}",
            block.y.nrows(),
            pilots.length()
        )));
    }
    let users = pilots.users();
    let antennas = block.y.ncols();
    let cov = sample_covariance(&block.y);
    let columns: Vec<DVector<C64>> = (0..users).map(|k| pilots.0.column(k).into_owned()).collect();
    let mut state = MlState::new(users, &cov, config.sigma2);
    let mut rng = stream_rng(config.seed, Stream::Schedule, block.pose as u64);
    let mut order: Vec<usize> = (0..users).collect();
    for _ in 0..config.iterations {
        order.shuffle(&mut rng);
        for &k in &order {
            coordinate_update(&mut state, k, &columns[k], &cov);
        }
    }
    let power: Vec<f64> = state.eta.iter().map(|e| e * antennas as f64).collect();
    let detected = power.iter().map(|&p| u8::from(p > config.epsilon)).collect();
    Ok(PoseEstimate {
        pose: block.pose,
        eta: state.eta,
        power,
        detected,
        nll: state.nll,
        updates: config.iterations * users,
    })
}

/// Estimates of one group, in the group's pose order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JdcOutput {
    pub group: usize,
    pub estimates: Vec<PoseEstimate>,
}

/// Joint sparsity detection and power estimation for one group. Poses run in
/// parallel; the output order follows `group.poses`.
pub fn jdc_estimate(
    group: &GroupAssignment,
    pilots: &PilotMatrix,
    blocks: &[ReceivedBlock],
    config: &JdcConfig,
) -> Result<JdcOutput> {
    config.validate()?;
    if blocks.len() != group.poses.len() || blocks.iter().zip(&group.poses).any(|(b, &m)| b.pose != m) {
        return Err(Error::ShapeMismatch(
            "one received block per group pose is required, in order".into(),
        ));
    }
    let estimates = blocks
        .par_iter()
        .map(|b| estimate_pose(pilots, b, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(JdcOutput {
        group: group.group,
        estimates,
    })
}
