use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepAxis};
use super::metrics::MetricsReport;
use super::protocol::run_protocol;
use crate::error::{Error, Result};

/// One protocol run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Seed statistics of one metric at one axis value. NaN samples are left
/// out and `n` counts the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub value: f64,
    pub algorithm: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub std_err: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

/// Which algorithm each summarized metric belongs to.
const SUMMARY_METRICS: [(&str, &str, &str); 9] = [
    ("detection_error_rate", "jdc", "detection_error_rate"),
    ("detection_error_rate_full", "jdc", "detection_error_rate_full"),
    ("nmse_p", "jdc", "nmse_p"),
    ("nmse_c", "restricted_ls", "nmse_c"),
    ("nmse_c_plain", "plain_ls", "nmse_c"),
    ("sum_rate", "pso", "sum_rate"),
    ("sum_rate_rms", "rms", "sum_rate"),
    ("sum_rate_estimated", "pso", "sum_rate_estimated"),
    ("ergodic_rate", "pso", "ergodic_rate"),
];

pub fn summarize(samples: &[f64]) -> (f64, f64, f64, usize) {
    let xs: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, 0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, std / (n as f64).sqrt(), n)
}

/// Runs the protocol for every `(value, seed)` cell. Rows come back sorted by
/// axis value order, then seed order, whatever the worker count.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "a sweep needs at least one value and one seed".into(),
        ));
    }
    let configs = values
        .iter()
        .map(|&v| config.with_axis_value(axis, v))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, seed)| {
            run_protocol(&configs[i], seed).map(|out| SweepRow {
                axis: axis.name().to_string(),
                value: values[i],
                metrics: out.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let cell: Vec<&SweepRow> = rows[i * seeds.len()..(i + 1) * seeds.len()].iter().collect();
        for (field, algorithm, metric) in SUMMARY_METRICS {
            let samples: Vec<f64> = cell
                .iter()
                .map(|r| {
                    r.metrics
                        .values()
                        .into_iter()
                        .find(|(n, _)| *n == field)
                        .map_or(f64::NAN, |(_, v)| v)
                })
                .collect();
            let (mean, std, std_err, n) = summarize(&samples);
            summary.push(SummaryRow {
                axis: axis.name().to_string(),
                value,
                algorithm: algorithm.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                std_err,
                n,
            });
        }
    }
    Ok(SweepResult { rows, summary })
}

/// Seed-mean of one summarized `(algorithm, metric)` at each axis value.
pub fn summary_means(result: &SweepResult, algorithm: &str, metric: &str) -> Vec<(f64, f64)> {
    result
        .summary
        .iter()
        .filter(|r| r.algorithm == algorithm && r.metric == metric)
        .map(|r| (r.value, r.mean))
        .collect()
}

/// Writes `sweep.csv` (one row per run) and `sweep_summary.csv`.
pub fn write_sweep_outputs(dir: &Path, result: &SweepResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    // flattened structs cannot go through serialize(); write the header by hand
    let mut header = vec!["axis".to_string(), "value".to_string()];
    header.extend(MetricsReport::COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![r.axis.clone(), r.value.to_string(), r.metrics.seed.to_string()];
        rec.extend(r.metrics.values().into_iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("sweep_summary.csv"))?;
    for r in &result.summary {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
