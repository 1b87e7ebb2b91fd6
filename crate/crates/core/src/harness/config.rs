use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};
use crate::placement::PsoConfig;
use crate::stat_estimation::FitCriterion;

/// Candidate grid and surface layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Candidate poses M.
    pub candidates: usize,
    /// Poses visited during statistical estimation.
    pub sampled: usize,
    /// Surfaces B; also the number of processing groups.
    pub surfaces: usize,
    /// Antennas per surface N, a perfect square.
    pub antennas: usize,
    /// Side length of the cubic site, meters.
    pub site_side: f64,
    /// Sphere radius; defaults to half the site side.
    pub radius: Option<f64>,
    /// Element spacing; defaults to half a wavelength.
    pub antenna_spacing: Option<f64>,
    /// Minimum distance between selected surfaces, meters. No published
    /// value exists; the default is a free choice.
    pub d_min: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            candidates: 64,
            sampled: 16,
            surfaces: 4,
            antennas: 4,
            site_side: 1.0,
            radius: None,
            antenna_spacing: None,
            d_min: 0.2,
        }
    }
}

impl GridConfig {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(self.site_side / 2.0)
    }
}

/// Statistical and instantaneous estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Stage I pilot length L.
    pub pilot_length: usize,
    /// Stage III pilot length; defaults to `pilot_length`.
    pub inst_pilot_length: Option<usize>,
    /// Coordinate-descent sweeps T.
    pub iterations: usize,
    /// Direction dictionary size G.
    pub dictionary_size: usize,
    /// Threshold as a multiple of `N * sigma2`, where `sigma2` is the noise
    /// power normalized by the transmit power.
    pub epsilon_noise_factor: f64,
    /// Absolute threshold on channel power; overrides the noise factor.
    pub epsilon: Option<f64>,
    /// Estimator noise power, relative to the mean active per-antenna link
    /// power, used when the run is noiseless.
    pub noiseless_floor: f64,
    /// Column score used by the power reconstruction.
    pub reconstruction_fit: FitCriterion,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            pilot_length: 40,
            inst_pilot_length: None,
            iterations: 30,
            dictionary_size: 10_000,
            epsilon_noise_factor: 0.1,
            epsilon: None,
            noiseless_floor: 1e-9,
            reconstruction_fit: FitCriterion::default(),
        }
    }
}

impl EstimationConfig {
    pub fn inst_pilot_length(&self) -> usize {
        self.inst_pilot_length.unwrap_or(self.pilot_length)
    }
}

/// Baselines and optional Monte-Carlo checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Random subsets drawn by the random-max-sampling baseline; 0 disables it.
    pub rms_samples: usize,
    /// Monte-Carlo trials of the ergodic rate at the chosen poses; 0 disables it.
    pub ergodic_trials: usize,
    /// Also run plain least squares in Stage III.
    pub plain_ls: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            rms_samples: 100,
            ergodic_trials: 0,
            plain_ls: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PilotLength,
    TransmitPower,
    UserCount,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PilotLength => "pilot_length",
            SweepAxis::TransmitPower => "transmit_power",
            SweepAxis::UserCount => "user_count",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pilot_length" => Ok(SweepAxis::PilotLength),
            "transmit_power" => Ok(SweepAxis::TransmitPower),
            "user_count" => Ok(SweepAxis::UserCount),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::PilotLength,
            values: vec![10.0, 20.0, 40.0],
            seeds: (0..20).collect(),
        }
    }
}

/// Everything needed to run the protocol for one seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub grid: GridConfig,
    pub estimation: EstimationConfig,
    pub pso: PsoConfig,
    pub evaluation: EvaluationConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.scenario.validate()?;
        self.pso.validate()?;
        let g = &self.grid;
        if g.candidates == 0 || g.sampled == 0 || g.sampled > g.candidates {
            return bad(format!(
                "need 1 <= sampled ({}) <= candidates ({})",
                g.sampled, g.candidates
            ));
        }
        if g.surfaces == 0 || g.surfaces > g.candidates || !g.sampled.is_multiple_of(g.surfaces) {
            return bad(format!(
                "surfaces ({}) must divide sampled poses ({}) and not exceed candidates",
                g.surfaces, g.sampled
            ));
        }
        let root = (g.antennas as f64).sqrt().round() as usize;
        if g.antennas == 0 || root * root != g.antennas {
            return bad(format!("antennas ({}) must be a positive perfect square", g.antennas));
        }
        if !(g.site_side > 0.0) || !(g.radius() > 0.0) || !(g.d_min >= 0.0) {
            return bad("site side and radius must be positive, d_min non-negative".into());
        }
        if g.antenna_spacing.is_some_and(|d| !(d > 0.0)) {
            return bad("antenna spacing must be positive".into());
        }
        let e = &self.estimation;
        if e.pilot_length == 0 || e.inst_pilot_length() == 0 || e.iterations == 0 || e.dictionary_size == 0 {
            return bad("pilot lengths, iterations and dictionary size must be positive".into());
        }
        if !(e.epsilon_noise_factor > 0.0) || e.epsilon.is_some_and(|v| !(v > 0.0)) || !(e.noiseless_floor > 0.0) {
            return bad("thresholds and the noiseless floor must be positive".into());
        }
        Ok(())
    }

    /// Sets a dotted key such as `grid.surfaces` from its TOML text. Text that
    /// is not a TOML value is taken as a string.
    pub fn set_key(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Parse(e.to_string()))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
            Err(_) => toml::Value::String(raw.into()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::InvalidArgument(format!("'{key}' is not a table path")))?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("'{key}' is not a table path")))?
            .insert(parts[parts.len() - 1].to_string(), value);
        let text = toml::to_string(&root).map_err(|e| Error::Parse(e.to_string()))?;
        *self = Self::from_toml_str(&text).map_err(|e| Error::InvalidArgument(format!("{key} = {raw}: {e}")))?;
        Ok(())
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidArgument(format!(
                    "{} needs a positive integer, got {v}",
                    axis.name()
                )))
            }
        };
        match axis {
            SweepAxis::PilotLength => {
                let l = as_count(value)?;
                cfg.estimation.pilot_length = l;
                cfg.estimation.inst_pilot_length = Some(l);
            }
            SweepAxis::TransmitPower => {
                if cfg.scenario.snr_reference_power.is_none() {
                    cfg.scenario.snr_reference_power = Some(cfg.scenario.transmit_power);
                }
                cfg.scenario.transmit_power = value;
            }
            SweepAxis::UserCount => cfg.scenario.users = as_count(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.grid.radius(), 0.5);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[grid]\ncandidates = 32\nsampled = 8\n[estimation]\npilot_length = 12\n[scenario]\nusers = 6\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.candidates, 32);
        assert_eq!(cfg.estimation.inst_pilot_length(), 12);
        assert_eq!(cfg.scenario.users, 6);
        assert_eq!(cfg.pso.swarm_size, 100);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(ExperimentConfig::from_toml_str("[grid]\nsampled = 10\nsurfaces = 4\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[grid]\nantennas = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[grid]\nunknown = 3\n").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_key("grid.surfaces", "8").unwrap();
        cfg.set_key("scenario.snr_db", "10.5").unwrap();
        cfg.set_key("sweep.axis", "user_count").unwrap();
        assert_eq!(cfg.grid.surfaces, 8);
        assert_eq!(cfg.scenario.snr_db, Some(10.5));
        assert_eq!(cfg.sweep.axis, SweepAxis::UserCount);
        assert!(cfg.set_key("grid.no_such_key", "1").is_err());
        assert!(cfg.set_key("grid.surfaces", "3").is_err());
        assert_eq!(cfg.grid.surfaces, 8);
    }

    #[test]
    fn axis_values() {
        let cfg = ExperimentConfig::default();
        let c = cfg.with_axis_value(SweepAxis::PilotLength, 20.0).unwrap();
        assert_eq!((c.estimation.pilot_length, c.estimation.inst_pilot_length()), (20, 20));
        let c = cfg.with_axis_value(SweepAxis::TransmitPower, 0.5).unwrap();
        assert_eq!(c.scenario.transmit_power, 0.5);
        assert_eq!(c.scenario.snr_reference_power, Some(0.06));
        assert!(cfg.with_axis_value(SweepAxis::UserCount, 2.5).is_err());
        assert_eq!(SweepAxis::parse("user-count").unwrap(), SweepAxis::UserCount);
    }
}
