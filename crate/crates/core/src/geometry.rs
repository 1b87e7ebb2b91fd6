//! Pose algebra for movable antenna surfaces.
//!
//! A surface pose is a position `q` of the surface center in the global frame
//! (origin at the central processing unit) plus a rotation triple
//! `(alpha, beta, gamma)` about the x, y and z axes. The surface's local frame
//! has its x' axis along the surface normal; antennas sit in the y'-z' plane.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rotation angles in radians about the global x, y and z axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotationAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RotationAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    /// Same rotation with every angle wrapped into `[-pi, pi)`.
    pub fn canonical(self) -> Self {
        Self::new(wrap_angle(self.alpha), wrap_angle(self.beta), wrap_angle(self.gamma))
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: RotationAngles,
}

impl Pose {
    pub fn new(position: Vec3, rotation: RotationAngles) -> Self {
        Self { position, rotation }
    }

    /// Surface normal in the global frame, `R(u) * e_x`.
    pub fn normal(&self) -> Vec3 {
        rotation_matrix(&self.rotation).column(0).into_owned()
    }
}

/// Rotation matrix of a surface:
///
/// ```text
/// [ cb*cg             cb*sg             -sb   ]
/// [ sb*sa*cg - ca*sg  sb*sa*sg + ca*cg  cb*sa ]
/// [ ca*sb*cg + sa*sg  ca*sb*sg - sa*cg  ca*cb ]
/// ```
///
/// It maps local surface coordinates into the global frame.
pub fn rotation_matrix(u: &RotationAngles) -> Matrix3<f64> {
    let (sa, ca) = u.alpha.sin_cos();
    let (sb, cb) = u.beta.sin_cos();
    let (sg, cg) = u.gamma.sin_cos();
    Matrix3::new(
        cb * cg,
        cb * sg,
        -sb,
        sb * sa * cg - ca * sg,
        sb * sa * sg + ca * cg,
        cb * sa,
        ca * sb * cg + sa * sg,
        ca * sb * sg - sa * cg,
        ca * cb,
    )
}

/// Recovers angles from a proper rotation matrix laid out as in
/// [`rotation_matrix`]. At `cos(beta) = 0` the split between alpha and gamma
/// is not unique and gamma is fixed to zero.
pub fn angles_from_matrix(r: &Matrix3<f64>) -> RotationAngles {
    let sb = (-r[(0, 2)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    let cb = beta.cos();
    if cb > 1e-12 {
        let alpha = r[(1, 2)].atan2(r[(2, 2)]);
        let gamma = r[(0, 1)].atan2(r[(0, 0)]);
        RotationAngles::new(alpha, beta, gamma).canonical()
    } else {
        // gamma = 0: row 1 becomes [sb*sa, ca, 0]
        let alpha = (r[(1, 0)] * sb).atan2(r[(1, 1)]);
        RotationAngles::new(alpha, beta, 0.0).canonical()
    }
}

/// Global antenna positions `q + R(u) * r_n` for each local offset.
pub fn antenna_positions(pose: &Pose, offsets: &[Vec3]) -> Vec<Vec3> {
    let r = rotation_matrix(&pose.rotation);
    offsets.iter().map(|o| pose.position + r * o).collect()
}

/// Local offsets of a square planar array centered at the surface origin,
/// `sqrt(n)` by `sqrt(n)` elements with the given spacing in the y'-z' plane.
pub fn planar_offsets(n: usize, spacing: f64) -> Result<Vec<Vec3>> {
    let side = (n as f64).sqrt().round() as usize;
    if n == 0 || side * side != n {
        return Err(Error::InvalidArgument(format!(
            "antenna count {n} is not a positive perfect square"
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "antenna spacing {spacing} must be positive"
        )));
    }
    let center = (side as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n);
    for iz in 0..side {
        for iy in 0..side {
            out.push(Vec3::new(
                0.0,
                (iy as f64 - center) * spacing,
                (iz as f64 - center) * spacing,
            ));
        }
    }
    Ok(out)
}

/// Candidate poses plus the antenna layout shared by every surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub poses: Vec<Pose>,
    pub local_offsets: Vec<Vec3>,
    /// Pairwise Euclidean distance between pose positions.
    pub distance_matrix: DMatrix<f64>,
}

impl CandidateGrid {
    pub fn new(poses: Vec<Pose>, local_offsets: Vec<Vec3>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidArgument("candidate grid needs at least one pose".into()));
        }
        if local_offsets.is_empty() {
            return Err(Error::InvalidArgument("antenna offsets must be nonempty".into()));
        }
        let distance_matrix = distance_matrix(&poses);
        Ok(Self {
            poses,
            local_offsets,
            distance_matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.local_offsets.len()
    }

    /// Smallest off-diagonal entry of the distance matrix (infinite for one pose).
    pub fn min_distance(&self) -> f64 {
        let m = self.len();
        let mut best = f64::INFINITY;
        for i in 0..m {
            for j in (i + 1)..m {
                best = best.min(self.distance_matrix[(i, j)]);
            }
        }
        best
    }
}

pub fn distance_matrix(poses: &[Pose]) -> DMatrix<f64> {
    let m = poses.len();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = (poses[i].position - poses[j].position).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Unit vectors on a golden-spiral (Fibonacci) lattice.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Rotation whose local frame is (a_r, a_zeta, -a_w) at the given position:
/// the normal points radially outward, y' along the azimuth basis vector and
/// z' against the polar basis vector.
pub fn radial_rotation(position: &Vec3) -> RotationAngles {
    let r = position.norm();
    let polar = if r > 0.0 {
        (position.z / r).clamp(-1.0, 1.0).acos()
    } else {
        0.0
    };
    let azimuth = position.y.atan2(position.x);
    let (sw, cw) = polar.sin_cos();
    let (sz, cz) = azimuth.sin_cos();
    let a_r = Vec3::new(sw * cz, sw * sz, cw);
    let a_w = Vec3::new(cw * cz, cw * sz, -sw);
    let a_zeta = Vec3::new(-sz, cz, 0.0);
    let frame = Matrix3::from_columns(&[a_r, a_zeta, -a_w]);
    angles_from_matrix(&frame)
}

/// `count` radially oriented poses evenly spread over a sphere of the given
/// radius centered at the origin.
pub fn candidate_sphere_grid(count: usize, radius: f64, offsets: Vec<Vec3>) -> Result<CandidateGrid> {
    if count == 0 {
        return Err(Error::InvalidArgument("candidate count must be at least 1".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sphere radius {radius} must be positive"
        )));
    }
    let poses = fibonacci_sphere(count)
        .into_iter()
        .map(|dir| {
            let position = dir * radius;
            Pose::new(position, radial_rotation(&position))
        })
        .collect();
    CandidateGrid::new(poses, offsets)
}

/// A broken placement constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Surface `b` faces surface `j` (`n_b . (q_j - q_b) > 0`).
    MutualReflection { b: usize, j: usize },
    /// Surface `b` faces the CPU (`n_b . q_b < 0`).
    FacesCpu { b: usize },
    /// Surfaces closer than the minimum spacing.
    TooClose { b: usize, j: usize },
}

const CONSTRAINT_TOL: f64 = 1e-9;

/// Checks the reflection, CPU-blocking and minimum-distance constraints for a
/// set of simultaneously deployed surfaces.
pub fn check_constraints(poses: &[Pose], d_min: f64) -> Vec<Violation> {
    let normals: Vec<Vec3> = poses.iter().map(Pose::normal).collect();
    let mut out = Vec::new();
    for (b, pose) in poses.iter().enumerate() {
        if normals[b].dot(&pose.position) < -CONSTRAINT_TOL {
            out.push(Violation::FacesCpu { b });
        }
        for (j, other) in poses.iter().enumerate() {
            if j == b {
                continue;
            }
            if normals[b].dot(&(other.position - pose.position)) > CONSTRAINT_TOL {
                out.push(Violation::MutualReflection { b, j });
            }
            if j > b && (pose.position - other.position).norm() < d_min {
                out.push(Violation::TooClose { b, j });
            }
        }
    }
    out
}
