//! Stage I: statistical channel estimation.
//!
//! Each local processing unit observes pilot blocks at a handful of sampled
//! poses and runs maximum-likelihood coordinate descent on the per-user
//! powers ([`ml`]). The central unit then extrapolates the sampled powers to
//! every candidate pose by matching each user against a dictionary of
//! arrival directions ([`reconstruct`]).

pub mod ml;
pub mod reconstruct;

pub use ml::{
    coordinate_update, estimate_pose, jdc_estimate, nll, nu_objective, nu_star, JdcConfig, JdcOutput, MlState,
    PoseEstimate,
};
pub use reconstruct::{reconstruct_power, DoaDictionary, FitCriterion, Reconstruction};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::C64;
use crate::error::{Error, Result};
use crate::rng::{complex_normal_matrix, stream_rng, Stream};

/// Pilot sequences, `L x K`; column `k` is user `k`'s sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix(pub DMatrix<C64>);

impl PilotMatrix {
    pub fn length(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }
}

/// i.i.d. CN(0, 1) pilots from the Stage I pilot stream.
pub fn generate_pilots(length: usize, users: usize, seed: u64) -> Result<PilotMatrix> {
    random_pilots(length, users, &mut stream_rng(seed, Stream::StatPilots, 0))
}

/// i.i.d. CN(0, 1) pilots from an arbitrary stream.
pub fn random_pilots<R: Rng + ?Sized>(length: usize, users: usize, rng: &mut R) -> Result<PilotMatrix> {
    if length == 0 || users == 0 {
        return Err(Error::InvalidArgument(
            "pilot length and user count must be positive".into(),
        ));
    }
    Ok(PilotMatrix(complex_normal_matrix(rng, length, users, 1.0)))
}

/// Pilot observation at one pose, `L x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    pub y: DMatrix<C64>,
    pub pose: usize,
}

/// `Y = X diag(z) H^T + W` with `W` i.i.d. CN(0, sigma2). `h` is `N x K`.
pub fn simulate_uplink_block<R: Rng + ?Sized>(
    pilots: &PilotMatrix,
    h: &DMatrix<C64>,
    z_row: &[u8],
    sigma2: f64,
    pose: usize,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let k = pilots.users();
    if h.ncols() != k || z_row.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "pilots have {k} users, channel block {} columns, indicator length {}",
            h.ncols(),
            z_row.len()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("noise power must be non-negative".into()));
    }
    let mut gated = h.clone();
    for (j, &z) in z_row.iter().enumerate() {
        if z == 0 {
            gated.column_mut(j).fill(C64::new(0.0, 0.0));
        }
    }
    let mut y = &pilots.0 * gated.transpose();
    if sigma2 > 0.0 {
        y += complex_normal_matrix(rng, y.nrows(), y.ncols(), sigma2);
    }
    Ok(ReceivedBlock { y, pose })
}

/// `Y Y^H / N`.
pub fn sample_covariance(y: &DMatrix<C64>) -> DMatrix<C64> {
    let n = y.ncols().max(1) as f64;
    (y * y.adjoint()).unscale(n)
}

/// One local processing unit's share of the sampled poses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group: usize,
    pub poses: Vec<usize>,
}

/// `count` pose indices spread evenly over `0..total`, `floor(i * total / count)`.
pub fn sampled_pose_indices(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} of {total} poses"
        )));
    }
    Ok((0..count).map(|i| i * total / count).collect())
}

/// Splits the sampled poses into `groups` contiguous blocks of equal size.
pub fn assign_groups(sampled: &[usize], groups: usize) -> Result<Vec<GroupAssignment>> {
    if groups == 0 || sampled.is_empty() || !sampled.len().is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "{} sampled poses cannot be split into {groups} equal groups",
            sampled.len()
        )));
    }
    let size = sampled.len() / groups;
    Ok(sampled
        .chunks(size)
        .enumerate()
        .map(|(group, poses)| GroupAssignment {
            group,
            poses: poses.to_vec(),
        })
        .collect())
}
