//! Multipath channels from users to candidate surface poses.
//!
//! Each user reaches the base station over a cluster of paths. A path has a
//! power `mu`, a phase and a direction-of-arrival vector `f` pointing along the
//! propagation direction (from the scatterer toward the array). The response
//! of a surface at pose `(q, u)` is the sum over paths of
//! `exp(-j*phase) * sqrt(mu) * sqrt(g(u, f)) * a(q, u, f)`, where `g` is the
//! directive element gain and `a` the steering vector.

mod scenario;

pub use scenario::{generate_scenario, planted_user, Hotspot, Scenario, ScenarioConfig, SCENARIO_FORMAT_VERSION};

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{antenna_positions, rotation_matrix, CandidateGrid, Pose, RotationAngles, Vec3};

pub type C64 = Complex<f64>;

/// One propagation path of a user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Linear path power.
    pub gain: f64,
    /// Phase shift in `[0, 2*pi)`.
    pub phase: f64,
    /// Elevation of the DOA in `[-pi/2, pi/2]`.
    pub theta: f64,
    /// Azimuth of the DOA in `[-pi, pi]`.
    pub phi_az: f64,
}

impl PathComponent {
    pub fn doa(&self) -> Vec3 {
        doa_vector(self.theta, self.phi_az)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub location: Vec3,
    pub paths: Vec<PathComponent>,
    /// DOA from the center of the user's scattering cluster.
    pub cluster_doa: Vec3,
    /// Average multipath power `t_k`, the sum of the path powers.
    pub multipath_power: f64,
}

/// Unit DOA vector `[cos(theta)cos(phi), cos(theta)sin(phi), sin(theta)]`.
pub fn doa_vector(theta: f64, phi_az: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi_az.sin_cos();
    Vec3::new(ct * cp, ct * sp, st)
}

/// Elevation and azimuth of a unit vector, inverse of [`doa_vector`].
pub fn doa_angles(f: &Vec3) -> (f64, f64) {
    (f.z.clamp(-1.0, 1.0).asin(), f.y.atan2(f.x))
}

/// DOA expressed in the surface's local frame, `-R(u)^-1 f`.
pub fn local_doa_vector(u: &RotationAngles, f: &Vec3) -> Vec3 {
    -(rotation_matrix(u).transpose() * f)
}

/// Local elevation and azimuth of a DOA as seen by a surface with rotation `u`.
pub fn local_doa(u: &RotationAngles, f: &Vec3) -> (f64, f64) {
    doa_angles(&local_doa_vector(u, f))
}

/// Directive element pattern (3GPP TR 38.901 single element) restricted to
/// the front half-space of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElementPattern {
    /// Boresight gain, dBi.
    pub max_gain_dbi: f64,
    /// Half-power beamwidth in both cuts, degrees.
    pub beamwidth_deg: f64,
    /// Front-to-back attenuation cap, dB.
    pub max_attenuation_db: f64,
    /// Vertical side-lobe level cap, dB.
    pub side_lobe_db: f64,
}

impl Default for ElementPattern {
    fn default() -> Self {
        Self {
            max_gain_dbi: 8.0,
            beamwidth_deg: 65.0,
            max_attenuation_db: 30.0,
            side_lobe_db: 30.0,
        }
    }
}

impl ElementPattern {
    /// Pattern value in dBi at local angles given in radians.
    pub fn gain_dbi(&self, theta: f64, phi: f64) -> f64 {
        let t = theta.to_degrees() / self.beamwidth_deg;
        let p = phi.to_degrees() / self.beamwidth_deg;
        let vertical = -(12.0 * t * t).min(self.side_lobe_db);
        let horizontal = -(12.0 * p * p).min(self.max_attenuation_db);
        self.max_gain_dbi - (-(vertical + horizontal)).min(self.max_attenuation_db)
    }

    pub fn boresight_gain(&self) -> f64 {
        10f64.powf(self.max_gain_dbi / 10.0)
    }

    /// Linear gain for a DOA already expressed in the local frame; zero outside
    /// the front half-space.
    pub fn gain_local(&self, local: &Vec3) -> f64 {
        if local.x <= 0.0 {
            return 0.0;
        }
        let (theta, phi) = doa_angles(local);
        10f64.powf(self.gain_dbi(theta, phi) / 10.0)
    }
}

/// Effective linear gain of a surface with rotation `u` for global DOA `f`.
pub fn antenna_gain(pattern: &ElementPattern, u: &RotationAngles, f: &Vec3) -> f64 {
    pattern.gain_local(&local_doa_vector(u, f))
}

/// Steering vector with entries `exp(-j * 2*pi/lambda * f . r_n)`.
pub fn steering_vector(pose: &Pose, f: &Vec3, offsets: &[Vec3], wavelength: f64) -> DVector<C64> {
    let k0 = 2.0 * PI / wavelength;
    let positions = antenna_positions(pose, offsets);
    DVector::from_iterator(
        positions.len(),
        positions.iter().map(|r| C64::from_polar(1.0, -k0 * f.dot(r))),
    )
}

/// Per-path responses of one user at one pose, with the phase term left out.
///
/// Column `i` holds `sqrt(mu_i) * sqrt(g_i) * a_i`. `None` when every path is
/// behind the surface.
fn path_responses(
    user: &UserSpec,
    pose: &Pose,
    offsets: &[Vec3],
    wavelength: f64,
    pattern: &ElementPattern,
) -> Option<DMatrix<C64>> {
    let n = offsets.len();
    let mut out = DMatrix::zeros(n, user.paths.len());
    let mut any = false;
    for (i, path) in user.paths.iter().enumerate() {
        let f = path.doa();
        let g = antenna_gain(pattern, &pose.rotation, &f);
        if g == 0.0 || path.gain == 0.0 {
            continue;
        }
        any = true;
        let amp = (path.gain * g).sqrt();
        let a = steering_vector(pose, &f, offsets, wavelength);
        out.column_mut(i).copy_from(&(a * C64::from(amp)));
    }
    any.then_some(out)
}

fn phase_weights(phases: impl Iterator<Item = f64>, len: usize) -> DVector<C64> {
    DVector::from_iterator(len, phases.map(|p| C64::from_polar(1.0, -p)))
}

/// Channel from one user to the antennas of a surface at `pose`.
pub fn synth_channel(
    user: &UserSpec,
    pose: &Pose,
    offsets: &[Vec3],
    wavelength: f64,
    pattern: &ElementPattern,
) -> DVector<C64> {
    match path_responses(user, pose, offsets, wavelength, pattern) {
        Some(resp) => resp * phase_weights(user.paths.iter().map(|p| p.phase), user.paths.len()),
        None => DVector::zeros(offsets.len()),
    }
}

/// Stacked channels, `(M*N) x K`; rows `m*N .. (m+1)*N` belong to pose `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub entries: DMatrix<C64>,
    pub antennas: usize,
}

impl ChannelMatrix {
    pub fn poses(&self) -> usize {
        self.entries.nrows() / self.antennas
    }

    pub fn users(&self) -> usize {
        self.entries.ncols()
    }

    /// `N x K` block of one pose.
    pub fn block(&self, m: usize) -> DMatrix<C64> {
        self.entries.rows(m * self.antennas, self.antennas).into_owned()
    }
}

/// Channels of every user to every pose of the grid using the users' stored
/// path phases.
pub fn synth_channel_matrix(
    users: &[UserSpec],
    grid: &CandidateGrid,
    wavelength: f64,
    pattern: &ElementPattern,
) -> ChannelMatrix {
    let n = grid.antennas();
    let mut entries = DMatrix::zeros(grid.len() * n, users.len());
    for (m, pose) in grid.poses.iter().enumerate() {
        for (k, user) in users.iter().enumerate() {
            let h = synth_channel(user, pose, &grid.local_offsets, wavelength, pattern);
            entries.view_mut((m * n, k), (n, 1)).copy_from(&h);
        }
    }
    ChannelMatrix { entries, antennas: n }
}

/// Redraws small-scale fading for a fixed set of poses.
///
/// Path geometry is precomputed once; every draw picks fresh i.i.d. uniform
/// phases per user path, shared by all poses of the sampler (one snapshot).
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    pose_indices: Vec<usize>,
    antennas: usize,
    users: usize,
    paths: Vec<usize>,
    responses: Vec<Option<DMatrix<C64>>>,
}

impl ChannelSampler {
    pub fn new(
        users: &[UserSpec],
        grid: &CandidateGrid,
        pose_indices: &[usize],
        wavelength: f64,
        pattern: &ElementPattern,
    ) -> Self {
        let mut responses = Vec::with_capacity(pose_indices.len() * users.len());
        for &m in pose_indices {
            for user in users {
                responses.push(path_responses(
                    user,
                    &grid.poses[m],
                    &grid.local_offsets,
                    wavelength,
                    pattern,
                ));
            }
        }
        Self {
            pose_indices: pose_indices.to_vec(),
            antennas: grid.antennas(),
            users: users.len(),
            paths: users.iter().map(|u| u.paths.len()).collect(),
            responses,
        }
    }

    pub fn pose_indices(&self) -> &[usize] {
        &self.pose_indices
    }

    /// One channel snapshot for the sampler's poses, rows ordered as
    /// `pose_indices`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelMatrix {
        let weights: Vec<DVector<C64>> = self
            .paths
            .iter()
            .map(|&g| {
                let phases: Vec<f64> = (0..g).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                phase_weights(phases.into_iter(), g)
            })
            .collect();
        let n = self.antennas;
        let mut entries = DMatrix::zeros(self.pose_indices.len() * n, self.users);
        for p in 0..self.pose_indices.len() {
            for k in 0..self.users {
                if let Some(resp) = &self.responses[p * self.users + k] {
                    let h = resp * &weights[k];
                    entries.view_mut((p * n, k), (n, 1)).copy_from(&h);
                }
            }
        }
        ChannelMatrix { entries, antennas: n }
    }
}

/// Average channel power matrix, `M x K`, linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerMatrix(pub DMatrix<f64>);

/// Binary directional sparsity indicator, `M x K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMatrix(pub DMatrix<u8>);

impl PowerMatrix {
    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    /// Entries strictly above `epsilon` become ones.
    pub fn threshold(&self, epsilon: f64) -> SparsityMatrix {
        SparsityMatrix(self.0.map(|p| u8::from(p > epsilon)))
    }

    /// Rows at the given pose indices, in order.
    pub fn select_rows(&self, rows: &[usize]) -> PowerMatrix {
        PowerMatrix(self.0.select_rows(rows.iter()))
    }
}

impl SparsityMatrix {
    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row_vec(&self, m: usize) -> Vec<u8> {
        self.0.row(m).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> SparsityMatrix {
        SparsityMatrix(self.0.select_rows(rows.iter()))
    }
}

/// Analytic average power from the cluster approximation,
/// `P[m,k] = N * g(u_m, f_k) * t_k`, and its support at threshold `epsilon`.
pub fn true_power_matrix(
    users: &[UserSpec],
    grid: &CandidateGrid,
    pattern: &ElementPattern,
    epsilon: f64,
) -> (PowerMatrix, SparsityMatrix) {
    let n = grid.antennas() as f64;
    let p = DMatrix::from_fn(grid.len(), users.len(), |m, k| {
        let user = &users[k];
        n * antenna_gain(pattern, &grid.poses[m].rotation, &user.cluster_doa) * user.multipath_power
    });
    let p = PowerMatrix(p);
    let z = p.threshold(epsilon);
    (p, z)
}

/// Exact mean of `||h_{m,k}||^2` under i.i.d. uniform path phases,
/// `N * sum_i mu_i * g_i(u_m)`.
pub fn exact_power_matrix(users: &[UserSpec], grid: &CandidateGrid, pattern: &ElementPattern) -> PowerMatrix {
    let n = grid.antennas() as f64;
    PowerMatrix(DMatrix::from_fn(grid.len(), users.len(), |m, k| {
        let rot = &grid.poses[m].rotation;
        n * users[k]
            .paths
            .iter()
            .map(|p| p.gain * antenna_gain(pattern, rot, &p.doa()))
            .sum::<f64>()
    }))
}
