use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{doa_angles, ElementPattern, PathComponent, UserSpec};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{stream_rng, Stream};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// A spherical user hotspot, centered at `distance` meters in the direction
/// given by azimuth/elevation (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub distance: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

impl Hotspot {
    pub fn center(&self) -> Vec3 {
        super::doa_vector(self.elevation_deg.to_radians(), self.azimuth_deg.to_radians()) * self.distance
    }
}

/// User population and propagation parameters. SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of users K.
    pub users: usize,
    /// Fraction of users placed uniformly in the coverage shell.
    pub regular_ratio: f64,
    pub hotspots: Vec<Hotspot>,
    /// Inner radius of the coverage shell, meters.
    pub inner_radius: f64,
    /// Outer radius of the coverage shell, meters.
    pub outer_radius: f64,
    /// Paths (scatterers) per user.
    pub paths_per_user: usize,
    /// Radius of the scatterer ball around each user, meters.
    pub scatter_radius: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// Per-user transmit power, watts.
    pub transmit_power: f64,
    /// Target average received pilot SNR in dB; `None` means noiseless.
    pub snr_db: Option<f64>,
    /// Transmit power at which `snr_db` is calibrated; defaults to
    /// `transmit_power`. Fixing it keeps the noise floor constant while the
    /// transmit power varies.
    pub snr_reference_power: Option<f64>,
    /// Explicit noise power in watts; overrides `snr_db` when set.
    pub noise_power: Option<f64>,
    pub pattern: ElementPattern,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            users: 12,
            regular_ratio: 0.3,
            hotspots: vec![
                Hotspot {
                    distance: 100.0,
                    azimuth_deg: 0.0,
                    elevation_deg: -10.0,
                    radius: 15.0,
                },
                Hotspot {
                    distance: 60.0,
                    azimuth_deg: 120.0,
                    elevation_deg: -20.0,
                    radius: 10.0,
                },
                Hotspot {
                    distance: 40.0,
                    azimuth_deg: 240.0,
                    elevation_deg: -30.0,
                    radius: 5.0,
                },
            ],
            inner_radius: 30.0,
            outer_radius: 200.0,
            paths_per_user: 100,
            scatter_radius: 3.0,
            wavelength: 0.125,
            transmit_power: 0.06,
            snr_db: Some(25.0),
            snr_reference_power: None,
            noise_power: None,
            pattern: ElementPattern::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.users == 0 {
            return bad("users must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.regular_ratio) {
            return bad("regular_ratio must lie in [0, 1]");
        }
        if self.regular_ratio < 1.0 && self.hotspots.is_empty() {
            return bad("regular_ratio < 1 requires at least one hotspot");
        }
        if !(self.inner_radius > 0.0 && self.outer_radius > self.inner_radius) {
            return bad("coverage radii must satisfy 0 < inner_radius < outer_radius");
        }
        if self.hotspots.iter().any(|h| !(h.radius > 0.0 && h.distance > h.radius)) {
            return bad("hotspot radius must be positive and smaller than its distance");
        }
        if self.paths_per_user == 0 {
            return bad("paths_per_user must be at least 1");
        }
        if !(self.scatter_radius >= 0.0 && self.wavelength > 0.0 && self.transmit_power > 0.0) {
            return bad("scatter_radius, wavelength and transmit_power must be positive");
        }
        if self.noise_power.is_some_and(|v| !(v >= 0.0)) || self.snr_reference_power.is_some_and(|v| !(v > 0.0)) {
            return bad("noise_power must be non-negative and snr_reference_power positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A generated user population, serializable for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub users: Vec<UserSpec>,
}

impl Scenario {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported scenario version {} (expected {SCENARIO_FORMAT_VERSION})",
                s.version
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let rho = (1.0 - z * z).sqrt();
    Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
}

/// Uniform point in the shell `r0 <= |x| <= r1`.
fn in_shell<R: Rng + ?Sized>(rng: &mut R, r0: f64, r1: f64) -> Vec3 {
    let u: f64 = rng.random();
    let r = (r0.powi(3) + u * (r1.powi(3) - r0.powi(3))).cbrt();
    unit_sphere(rng) * r
}

fn free_space_gain(wavelength: f64, distance: f64) -> f64 {
    (wavelength / (4.0 * PI * distance)).powi(2)
}

/// Draws users: locations, scatterers, path powers and phases. Each user has
/// its own RNG stream, so user `k` does not depend on how many users follow.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let regular = (config.regular_ratio * config.users as f64).round() as usize;
    let users = (0..config.users)
        .map(|k| {
            let mut rng = stream_rng(seed, Stream::Scenario, k as u64);
            let location = if k < regular {
                in_shell(&mut rng, config.inner_radius, config.outer_radius)
            } else {
                let h = &config.hotspots[rng.random_range(0..config.hotspots.len())];
                h.center() + in_shell(&mut rng, 0.0, h.radius)
            };
            let mu = free_space_gain(config.wavelength, location.norm()) / config.paths_per_user as f64;
            let paths = (0..config.paths_per_user)
                .map(|_| {
                    let s = location + in_shell(&mut rng, 0.0, config.scatter_radius);
                    let (theta, phi_az) = doa_angles(&(-s.normalize()));
                    PathComponent {
                        gain: mu,
                        phase: rng.random_range(0.0..2.0 * PI),
                        theta,
                        phi_az,
                    }
                })
                .collect::<Vec<_>>();
            let multipath_power = paths.iter().map(|p| p.gain).sum();
            UserSpec {
                location,
                paths,
                cluster_doa: -location.normalize(),
                multipath_power,
            }
        })
        .collect();
    Ok(Scenario {
        version: SCENARIO_FORMAT_VERSION,
        seed,
        config: config.clone(),
        users,
    })
}

/// Single-path user arriving along the unit vector `f` with power `power`.
/// `f` is stored unchanged as the cluster DOA.
pub fn planted_user(f: Vec3, power: f64, phase: f64) -> UserSpec {
    let (theta, phi_az) = doa_angles(&f);
    UserSpec {
        location: -f * 100.0,
        paths: vec![PathComponent {
            gain: power,
            phase,
            theta,
            phi_az,
        }],
        cluster_doa: f,
        multipath_power: power,
    }
}
