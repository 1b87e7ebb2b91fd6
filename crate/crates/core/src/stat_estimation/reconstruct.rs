//! Extrapolates sampled channel powers to the full candidate grid.
//!
//! Every user is modeled by one arrival direction `f` and one multipath power
//! `t`, so its power at pose `m` is `N * g(u_m, f) * t`. The direction is
//! found by scanning a fixed direction grid for the column that best fits the
//! sampled powers with a non-negative coefficient (one step of non-negative
//! OMP). Sampled poses where the user was not detected act as a one-sided
//! constraint on the fitted column.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{antenna_gain, ElementPattern, PowerMatrix, SparsityMatrix};
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_sphere, CandidateGrid, Vec3};

/// Candidate arrival directions (propagation directions, toward the array).
#[derive(Debug, Clone, PartialEq)]
pub struct DoaDictionary {
    pub directions: Vec<Vec3>,
}

impl DoaDictionary {
    /// `count` directions spread over the whole sphere.
    pub fn fibonacci(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("dictionary needs at least one direction".into()));
        }
        Ok(Self {
            directions: fibonacci_sphere(count),
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub p_hat: PowerMatrix,
    pub z_hat: SparsityMatrix,
    /// Estimated multipath power per user; zero for skipped users.
    pub t_hat: Vec<f64>,
    /// Index of the winning dictionary direction per user.
    pub direction: Vec<Option<usize>>,
    /// Users with no detected sampled pose (or no usable column).
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Fit {
    column: usize,
    coefficient: f64,
    residual: f64,
}

/// How a dictionary column is scored against the sampled powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitCriterion {
    /// Squared error on the detected rows, least-squares coefficient.
    LeastSquares,
    /// Negative log-likelihood with exponentially distributed power
    /// estimates around `c * v`; undetected rows count as censored below
    /// the threshold.
    #[default]
    Exponential,
}

/// Best non-negative single-column fit of `y` (observed on `rows`) over the
/// dictionary columns; `off` holds the sampled rows where nothing was
/// detected. Ties go to the lowest column index.
fn best_column(
    columns: &DMatrix<f64>,
    rows: &[usize],
    y: &[f64],
    off: &[usize],
    epsilon: f64,
    criterion: FitCriterion,
) -> Option<Fit> {
    let mut best: Option<Fit> = None;
    for g in 0..columns.ncols() {
        let col = columns.column(g);
        let fit = match criterion {
            FitCriterion::LeastSquares => least_squares_score(col.as_slice(), rows, y, off, epsilon),
            FitCriterion::Exponential => exponential_score(col.as_slice(), rows, y, off, epsilon),
        };
        let Some((coefficient, residual)) = fit else { continue };
        if best.is_none_or(|b| residual < b.residual) {
            best = Some(Fit {
                column: g,
                coefficient,
                residual,
            });
        }
    }
    best
}

/// Least-squares coefficient on `rows`; the score adds
/// `max(0, c * v - epsilon)^2` for every row in `off`, so a direction must
/// not predict detectable power where none was detected.
fn least_squares_score(col: &[f64], rows: &[usize], y: &[f64], off: &[usize], epsilon: f64) -> Option<(f64, f64)> {
    let (mut vv, mut vy, mut yy) = (0.0, 0.0, 0.0);
    for (&r, &yi) in rows.iter().zip(y) {
        vv += col[r] * col[r];
        vy += col[r] * yi;
        yy += yi * yi;
    }
    if vv == 0.0 {
        return None;
    }
    let c = (vy / vv).max(0.0);
    let mut residual = (yy - 2.0 * c * vy + c * c * vv).max(0.0);
    for &r in off {
        residual += (c * col[r] - epsilon).max(0.0).powi(2);
    }
    Some((c, residual))
}

/// Coefficient `mean(y / v)` over detected rows the column reaches. A
/// detected row the column cannot reach is scored as if its mean were
/// `epsilon`.
fn exponential_score(col: &[f64], rows: &[usize], y: &[f64], off: &[usize], epsilon: f64) -> Option<(f64, f64)> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (&r, &yi) in rows.iter().zip(y) {
        if col[r] > 0.0 {
            sum += yi / col[r];
            count += 1;
        }
    }
    if count == 0 || !(sum > 0.0) {
        return None;
    }
    let c = sum / count as f64;
    let mut nll = 0.0;
    for (&r, &yi) in rows.iter().zip(y) {
        let mean = (c * col[r]).max(epsilon);
        nll += mean.ln() + yi / mean;
    }
    for &r in off {
        let mean = c * col[r];
        if mean > 0.0 {
            nll -= (-(-epsilon / mean).exp_m1()).ln();
        }
    }
    Some((c, nll))
}

/// Reconstructs `P_hat` over all poses of `grid` from the sampled rows
/// `p_bar` (one row per entry of `sampled`) and their support `z_bar`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_power(
    p_bar: &PowerMatrix,
    z_bar: &SparsityMatrix,
    grid: &CandidateGrid,
    sampled: &[usize],
    dictionary: &DoaDictionary,
    pattern: &ElementPattern,
    epsilon: f64,
    criterion: FitCriterion,
) -> Result<Reconstruction> {
    let users = p_bar.ncols();
    if p_bar.nrows() != sampled.len() || z_bar.nrows() != sampled.len() || z_bar.ncols() != users {
        return Err(Error::ShapeMismatch(
            "sampled power and support rows must match the sampled poses".into(),
        ));
    }
    if sampled.iter().any(|&m| m >= grid.len()) {
        return Err(Error::InvalidArgument("sampled pose index outside the grid".into()));
    }
    if dictionary.is_empty() {
        return Err(Error::InvalidArgument("empty direction dictionary".into()));
    }
    if criterion == FitCriterion::Exponential && !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(
            "the exponential fit needs a positive threshold".into(),
        ));
    }
    let n = grid.antennas() as f64;
    // N * g(u_m, f_g) for the sampled poses
    let sampled_columns = DMatrix::from_fn(sampled.len(), dictionary.len(), |j, g| {
        n * antenna_gain(pattern, &grid.poses[sampled[j]].rotation, &dictionary.directions[g])
    });
    let fits: Vec<Option<Fit>> = (0..users)
        .into_par_iter()
        .map(|k| {
            let rows: Vec<usize> = (0..sampled.len()).filter(|&j| z_bar.0[(j, k)] != 0).collect();
            if rows.is_empty() {
                return None;
            }
            let off: Vec<usize> = (0..sampled.len()).filter(|&j| z_bar.0[(j, k)] == 0).collect();
            let y: Vec<f64> = rows.iter().map(|&j| p_bar.0[(j, k)]).collect();
            best_column(&sampled_columns, &rows, &y, &off, epsilon, criterion)
        })
        .collect();
    let mut p_hat = DMatrix::zeros(grid.len(), users);
    let mut t_hat = vec![0.0; users];
    let mut direction = vec![None; users];
    let mut skipped = Vec::new();
    for (k, fit) in fits.iter().enumerate() {
        match fit {
            Some(fit) => {
                t_hat[k] = fit.coefficient;
                direction[k] = Some(fit.column);
                let f = &dictionary.directions[fit.column];
                for (m, pose) in grid.poses.iter().enumerate() {
                    p_hat[(m, k)] = n * antenna_gain(pattern, &pose.rotation, f) * fit.coefficient;
                }
            }
            None => skipped.push(k),
        }
    }
    let p_hat = PowerMatrix(p_hat);
    let z_hat = p_hat.threshold(epsilon);
    Ok(Reconstruction {
        p_hat,
        z_hat,
        t_hat,
        direction,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{planted_user, true_power_matrix};
    use crate::geometry::{candidate_sphere_grid, planar_offsets};
    use crate::stat_estimation::sampled_pose_indices;

    fn setup() -> (CandidateGrid, DoaDictionary, Vec<usize>) {
        let grid = candidate_sphere_grid(64, 0.5, planar_offsets(4, 0.0625).unwrap()).unwrap();
        let dict = DoaDictionary::fibonacci(2000).unwrap();
        let sampled = sampled_pose_indices(64, 16).unwrap();
        (grid, dict, sampled)
    }

    #[test]
    fn planted_on_grid_users_are_recovered_exactly() {
        let (grid, dict, sampled) = setup();
        let pat = ElementPattern::default();
        let picks = [17usize, 450, 999, 1503];
        let users: Vec<_> = picks
            .iter()
            .enumerate()
            .map(|(i, &g)| planted_user(dict.directions[g], 1e-7 * (i + 1) as f64, 0.0))
            .collect();
        let eps = 1e-9;
        let (p, z) = true_power_matrix(&users, &grid, &pat, eps);
        for criterion in [FitCriterion::Exponential, FitCriterion::LeastSquares] {
            let (ps, zs) = (p.select_rows(&sampled), z.select_rows(&sampled));
            let rec = reconstruct_power(&ps, &zs, &grid, &sampled, &dict, &pat, eps, criterion).unwrap();
            assert!(rec.skipped.is_empty());
            for (k, &g) in picks.iter().enumerate() {
                assert_eq!(rec.direction[k], Some(g), "{criterion:?}");
                assert!((rec.t_hat[k] - users[k].multipath_power).abs() <= 1e-12 * users[k].multipath_power);
            }
            let err = (&rec.p_hat.0 - &p.0).norm_squared() / p.0.norm_squared();
            assert!(err < 1e-18, "{criterion:?} nmse {err}");
            assert_eq!(rec.z_hat, z);
        }
    }

    #[test]
    fn exponential_fit_needs_positive_threshold() {
        let (grid, dict, sampled) = setup();
        let p_bar = PowerMatrix(DMatrix::from_element(16, 1, 1.0));
        let z_bar = SparsityMatrix(DMatrix::from_element(16, 1, 1));
        let pat = ElementPattern::default();
        let r = reconstruct_power(
            &p_bar,
            &z_bar,
            &grid,
            &sampled,
            &dict,
            &pat,
            0.0,
            FitCriterion::Exponential,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_column_closed_form() {
        let (grid, _, sampled) = setup();
        let pat = ElementPattern::default();
        let dict = DoaDictionary {
            directions: vec![-grid.poses[sampled[2]].position.normalize()],
        };
        let p_bar = PowerMatrix(DMatrix::from_fn(16, 1, |j, _| 0.1 + 0.01 * j as f64));
        let z_bar = SparsityMatrix(DMatrix::from_element(16, 1, 1));
        let rec = reconstruct_power(
            &p_bar,
            &z_bar,
            &grid,
            &sampled,
            &dict,
            &pat,
            1e-3,
            FitCriterion::LeastSquares,
        )
        .unwrap();
        let v: Vec<f64> = sampled
            .iter()
            .map(|&m| 4.0 * antenna_gain(&pat, &grid.poses[m].rotation, &dict.directions[0]))
            .collect();
        let vy: f64 = v.iter().zip(p_bar.0.iter()).map(|(a, b)| a * b).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        assert!((rec.t_hat[0] - vy / vv).abs() < 1e-12 * rec.t_hat[0]);
    }

    #[test]
    fn scaling_is_homogeneous() {
        let (grid, dict, sampled) = setup();
        let pat = ElementPattern::default();
        let p_bar = PowerMatrix(DMatrix::from_fn(16, 3, |j, k| ((j * 7 + k * 3) % 5) as f64 * 0.2));
        let z_bar = p_bar.threshold(0.1);
        let a = reconstruct_power(
            &p_bar,
            &z_bar,
            &grid,
            &sampled,
            &dict,
            &pat,
            0.1,
            FitCriterion::Exponential,
        )
        .unwrap();
        let doubled = PowerMatrix(&p_bar.0 * 2.0);
        let b = reconstruct_power(
            &doubled,
            &z_bar,
            &grid,
            &sampled,
            &dict,
            &pat,
            0.2,
            FitCriterion::Exponential,
        )
        .unwrap();
        assert_eq!(a.direction, b.direction);
        for k in 0..3 {
            assert!((b.t_hat[k] - 2.0 * a.t_hat[k]).abs() <= 1e-12 * b.t_hat[k].max(1e-300));
        }
    }

    #[test]
    fn empty_support_is_skipped() {
        let (grid, dict, sampled) = setup();
        let p_bar = PowerMatrix(DMatrix::zeros(16, 2));
        let z_bar = SparsityMatrix(DMatrix::zeros(16, 2));
        let rec = reconstruct_power(
            &p_bar,
            &z_bar,
            &grid,
            &sampled,
            &dict,
            &ElementPattern::default(),
            0.1,
            FitCriterion::Exponential,
        )
        .unwrap();
        assert_eq!(rec.skipped, vec![0, 1]);
        assert!(rec.p_hat.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn undetected_poses_constrain_the_direction() {
        // a flat column on the detected rows must not win when it predicts
        // large power on a row where nothing was detected
        let cols = DMatrix::from_row_slice(3, 2, &[1.0, 0.01, 1.1, 0.01, 0.0, 5.0]);
        let y = [0.0105, 0.0095];
        let fit = best_column(&cols, &[0, 1], &y, &[], 0.0, FitCriterion::LeastSquares).unwrap();
        assert_eq!(fit.column, 1);
        let fit = best_column(&cols, &[0, 1], &y, &[2], 1e-3, FitCriterion::LeastSquares).unwrap();
        assert_eq!(fit.column, 0);
    }
}
