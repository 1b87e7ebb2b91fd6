//! Stage III: instantaneous channel estimation at the selected poses.
//!
//! The received pilot block at a surface is `Y = X H^T + W` with `H` of shape
//! `N x K`. Antenna `n` sees `Y[:, n] = X H[n, :]^T + W[:, n]`, so the
//! problem splits into `N` independent least-squares fits that share the
//! pilot matrix. Restricting the fit to the users the surface can actually
//! hear shrinks each fit from `K` to `|S|` unknowns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::C64;
use crate::error::{Error, Result};
use crate::stat_estimation::PilotMatrix;

/// Largest accepted condition number of the restricted pilot matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Nonzero positions of `z ⊗ 1_N`, user-major: entry `k*N + n` is antenna
/// `n` of user `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub users: Vec<usize>,
    pub indices: Vec<usize>,
    pub antennas: usize,
    pub total_users: usize,
}

impl SupportSet {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

pub fn build_support(z_row: &[u8], antennas: usize) -> SupportSet {
    let users: Vec<usize> = z_row
        .iter()
        .enumerate()
        .filter(|(_, &z)| z != 0)
        .map(|(k, _)| k)
        .collect();
    let indices = users
        .iter()
        .flat_map(|&k| (0..antennas).map(move |n| k * antennas + n))
        .collect();
    SupportSet {
        users,
        indices,
        antennas,
        total_users: z_row.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstEstimate {
    /// Stacked estimate, length `N*K`, user-major.
    pub h_hat: DVector<C64>,
    pub users: Vec<usize>,
    /// Frobenius norm of `Y - X_S H_S^T`.
    pub residual: f64,
}

impl InstEstimate {
    /// Estimate reshaped as `N x K`.
    pub fn matrix(&self, antennas: usize) -> DMatrix<C64> {
        DMatrix::from_column_slice(antennas, self.h_hat.len() / antennas, self.h_hat.as_slice())
    }
}

/// Least squares restricted to the supported users, solved per antenna via a
/// QR factorization of the column-selected pilot matrix.
pub fn restricted_ls(y: &DMatrix<C64>, pilots: &PilotMatrix, support: &SupportSet) -> Result<InstEstimate> {
    let (l, n) = y.shape();
    let k = pilots.users();
    if pilots.length() != l || support.antennas != n || support.total_users != k {
        return Err(Error::ShapeMismatch(format!(
            "Y is {l}x{n}, pilots {}x{k}, support for {} users x {} antennas",
            pilots.length(),
            support.total_users,
            support.antennas
        )));
    }
    let mut h_hat = DVector::zeros(n * k);
    let s = support.users.len();
    if s == 0 {
        return Ok(InstEstimate {
            h_hat,
            users: vec![],
            residual: y.norm(),
        });
    }
    if s > l {
        return Err(Error::RankDeficient(format!(
            "{s} supported users exceed pilot length {l}"
        )));
    }
    let xs = pilots.0.select_columns(support.users.iter());
    let sv = xs.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::RankDeficient(format!(
            "restricted pilot matrix condition number {:e}",
            smax / smin
        )));
    }
    let qr = xs.clone().qr();
    let rhs = qr.q().adjoint() * y;
    let coeffs = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    // coeffs is |S| x N; row i holds user support.users[i]
    for (i, &user) in support.users.iter().enumerate() {
        for a in 0..n {
            h_hat[user * n + a] = coeffs[(i, a)];
        }
    }
    let residual = (y - &xs * &coeffs).norm();
    Ok(InstEstimate {
        h_hat,
        users: support.users.clone(),
        residual,
    })
}

/// Conventional LS over all users.
pub fn plain_ls(y: &DMatrix<C64>, pilots: &PilotMatrix) -> Result<InstEstimate> {
    restricted_ls(y, pilots, &build_support(&vec![1; pilots.users()], y.ncols()))
}
