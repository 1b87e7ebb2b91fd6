use std::time::Duration;

use nalgebra::{ComplexField, DMatrix};
use serde::{Deserialize, Serialize};

use crate::channel::SparsityMatrix;
use crate::error::{Error, Result};

/// Missed-detection and false-alarm rates. A rate whose population is empty
/// is 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionError {
    pub missed: f64,
    pub false_alarm: f64,
    pub no_true_ones: bool,
    pub no_true_zeros: bool,
}

impl DetectionError {
    pub fn total(&self) -> f64 {
        self.missed + self.false_alarm
    }
}

pub fn detection_error(truth: &SparsityMatrix, estimate: &SparsityMatrix) -> Result<DetectionError> {
    if truth.0.shape() != estimate.0.shape() {
        return Err(Error::ShapeMismatch("sparsity matrices differ in shape".into()));
    }
    let (mut ones, mut zeros, mut missed, mut false_alarm) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &e) in truth.0.iter().zip(estimate.0.iter()) {
        if t != 0 {
            ones += 1;
            missed += usize::from(e == 0);
        } else {
            zeros += 1;
            false_alarm += usize::from(e != 0);
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(DetectionError {
        missed: rate(missed, ones),
        false_alarm: rate(false_alarm, zeros),
        no_true_ones: ones == 0,
        no_true_zeros: zeros == 0,
    })
}

/// Missed-detection plus false-alarm probability.
pub fn detection_error_rate(truth: &SparsityMatrix, estimate: &SparsityMatrix) -> Result<f64> {
    detection_error(truth, estimate).map(|d| d.total())
}

/// `||truth - estimate||^2 / ||truth||^2`.
pub fn nmse<T: ComplexField<RealField = f64>>(truth: &DMatrix<T>, estimate: &DMatrix<T>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch("nmse operands differ in shape".into()));
    }
    let denom = truth.norm_squared();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("nmse of an all-zero truth".into()));
    }
    Ok((truth - estimate).norm_squared() / denom)
}

/// One row of `metrics.csv`. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    /// Stage I detection error over the sampled poses.
    pub detection_error_rate: f64,
    pub missed_detection: f64,
    pub false_alarm: f64,
    /// Detection error of the reconstructed support over all candidates.
    pub detection_error_rate_full: f64,
    pub nmse_p: f64,
    /// Restricted least squares over the selected surfaces; NaN on failure.
    pub nmse_c: f64,
    /// Plain least squares; NaN when disabled or underdetermined.
    pub nmse_c_plain: f64,
    /// Rate bound of the swarm's selection, on the true power matrix.
    pub sum_rate: f64,
    /// Rate bound of the random-max-sampling selection; NaN when disabled.
    pub sum_rate_rms: f64,
    /// Rate bound of the swarm's selection, on the estimated power matrix.
    pub sum_rate_estimated: f64,
    /// Monte-Carlo ergodic rate of the swarm's selection; NaN when disabled.
    pub ergodic_rate: f64,
    pub pso_repaired: u8,
    pub skipped_users: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 14] = [
        "seed",
        "detection_error_rate",
        "missed_detection",
        "false_alarm",
        "detection_error_rate_full",
        "nmse_p",
        "nmse_c",
        "nmse_c_plain",
        "sum_rate",
        "sum_rate_rms",
        "sum_rate_estimated",
        "ergodic_rate",
        "pso_repaired",
        "skipped_users",
    ];

    /// Named numeric metrics, in column order after the seed.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("detection_error_rate", self.detection_error_rate),
            ("missed_detection", self.missed_detection),
            ("false_alarm", self.false_alarm),
            ("detection_error_rate_full", self.detection_error_rate_full),
            ("nmse_p", self.nmse_p),
            ("nmse_c", self.nmse_c),
            ("nmse_c_plain", self.nmse_c_plain),
            ("sum_rate", self.sum_rate),
            ("sum_rate_rms", self.sum_rate_rms),
            ("sum_rate_estimated", self.sum_rate_estimated),
            ("ergodic_rate", self.ergodic_rate),
            ("pso_repaired", f64::from(self.pso_repaired)),
            ("skipped_users", self.skipped_users as f64),
        ]
    }
}

/// Wall-clock time per stage. Kept out of the CSV outputs so those stay
/// reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub setup: Duration,
    pub stage_one: Duration,
    pub stage_two: Duration,
    pub stage_three: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.setup + self.stage_one + self.stage_two + self.stage_three
    }
}
