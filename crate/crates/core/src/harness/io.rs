//! CSV and text outputs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::metrics::MetricsReport;
use super::protocol::{ProtocolOutput, SurfaceEstimate};
use crate::channel::{PowerMatrix, SparsityMatrix};
use crate::error::{Error, Result};
use crate::stat_estimation::PoseEstimate;

fn matrix_csv<T: ToString>(path: &Path, rows: &[usize], m: &DMatrix<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["pose".to_string()];
    header.extend((0..m.ncols()).map(|k| format!("user_{k}")));
    w.write_record(&header)?;
    for (i, &pose) in rows.iter().enumerate() {
        let mut rec = vec![pose.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Power matrix with a leading pose-index column; `rows[i]` labels row `i`.
pub fn write_power_csv(path: &Path, rows: &[usize], p: &PowerMatrix) -> Result<()> {
    matrix_csv(path, rows, &p.0)
}

pub fn write_sparsity_csv(path: &Path, rows: &[usize], z: &SparsityMatrix) -> Result<()> {
    matrix_csv(path, rows, &z.0)
}

/// Reads a file written by [`write_power_csv`]; returns the pose labels and
/// the matrix.
pub fn read_power_csv(path: &Path) -> Result<(Vec<usize>, PowerMatrix)> {
    read_matrix_csv(path).map(|(rows, m)| (rows, PowerMatrix(m)))
}

/// Reads a file written by [`write_sparsity_csv`]. Entries must be 0 or 1.
pub fn read_sparsity_csv(path: &Path) -> Result<(Vec<usize>, SparsityMatrix)> {
    let (rows, m) = read_matrix_csv(path)?;
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parse(format!(
            "{}: sparsity entries must be 0 or 1",
            path.display()
        )));
    }
    Ok((rows, SparsityMatrix(m.map(|v| v as u8))))
}

fn read_matrix_csv(path: &Path) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let users = r.headers()?.len().saturating_sub(1);
    let mut poses = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != users + 1 {
            return Err(Error::Parse(format!(
                "row with {} fields, expected {}",
                rec.len(),
                users + 1
            )));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
        let pose = parse(&rec[0])?;
        if pose < 0.0 || pose.fract() != 0.0 {
            return Err(Error::Parse(format!("bad pose label '{}'", &rec[0])));
        }
        poses.push(pose as usize);
        for v in rec.iter().skip(1) {
            data.push(parse(v)?);
        }
    }
    let m = DMatrix::from_row_slice(poses.len(), users, &data);
    Ok((poses, m))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "gbest_fitness"])?;
    for (i, f) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Instantaneous estimates as `(pose, user, antenna, real, imag)`. Surfaces
/// without a restricted estimate are left out.
pub fn write_h_hat_csv(path: &Path, surfaces: &[SurfaceEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pose", "user", "antenna", "real", "imag"])?;
    for s in surfaces {
        let Some(est) = &s.restricted else { continue };
        let n = s.truth.nrows();
        for (i, v) in est.h_hat.iter().enumerate() {
            w.write_record([
                s.pose.to_string(),
                (i / n).to_string(),
                (i % n).to_string(),
                v.re.to_string(),
                v.im.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-pose Stage I summary lines.
pub fn estimation_report(estimates: &[PoseEstimate]) -> String {
    let mut s = String::from("pose  updates  final_nll  detected_users\n");
    for e in estimates {
        let detected = e.detected.iter().filter(|&&d| d != 0).count();
        let _ = writeln!(s, "{:>4}  {:>7}  {:.6e}  {}", e.pose, e.updates, e.nll, detected);
    }
    s
}

/// Human-readable run summary, including wall-clock timings.
pub fn protocol_report(out: &ProtocolOutput) -> String {
    let ctx = &out.context;
    let m = &out.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "seed: {}", ctx.seed);
    let _ = writeln!(
        s,
        "grid: M={} sampled={} B={} N={} radius={} d_min={}",
        ctx.grid.len(),
        out.stage_one.sampled.len(),
        ctx.config.grid.surfaces,
        ctx.antennas(),
        ctx.config.grid.radius(),
        ctx.config.grid.d_min
    );
    let _ = writeln!(s, "users: {}", ctx.users());
    let _ = writeln!(
        s,
        "noise: sigma2={:e} W, per unit power {:e}, estimator {:e}; epsilon={:e}",
        ctx.noise.sigma2, ctx.noise.sim_sigma2, ctx.noise.est_sigma2, ctx.epsilon
    );
    let _ = writeln!(s, "\n[stage I]");
    for g in &out.stage_one.groups {
        let _ = writeln!(s, "group {}: poses {:?}", g.group, g.poses);
    }
    s.push_str(&estimation_report(&out.stage_one.estimates));
    if !out.stage_one.reconstruction.skipped.is_empty() {
        let _ = writeln!(
            s,
            "users with empty support (P_hat column zero): {:?}",
            out.stage_one.reconstruction.skipped
        );
    }
    let _ = writeln!(s, "\n[stage II]");
    let _ = writeln!(s, "selected poses: {:?}", out.stage_two.pso.selection.indices());
    if out.stage_two.pso.repaired {
        let _ = writeln!(s, "rounded global best was infeasible and has been repaired");
    }
    if let Some(r) = &out.stage_two.rms {
        let _ = writeln!(s, "rms selection: {:?}", r.indices());
    }
    let _ = writeln!(s, "\n[stage III]");
    for sf in &out.stage_three.surfaces {
        match &sf.restricted {
            Some(e) => {
                let _ = writeln!(
                    s,
                    "pose {}: support {:?}, residual {:.6e}",
                    sf.pose, e.users, e.residual
                );
            }
            None => {
                let _ = writeln!(s, "pose {}: restricted problem rank deficient", sf.pose);
            }
        }
    }
    let _ = writeln!(s, "\n[metrics]");
    for (name, v) in m.values() {
        let _ = writeln!(s, "{name}: {v}");
    }
    let t = &out.timings;
    let _ = writeln!(s, "\n[timings]");
    let _ = writeln!(s, "setup: {:.3} s", t.setup.as_secs_f64());
    let _ = writeln!(s, "stage_one: {:.3} s", t.stage_one.as_secs_f64());
    let _ = writeln!(s, "stage_two: {:.3} s", t.stage_two.as_secs_f64());
    let _ = writeln!(s, "stage_three: {:.3} s", t.stage_three.as_secs_f64());
    let _ = writeln!(s, "total: {:.3} s", t.total().as_secs_f64());
    s
}

/// Writes the standard output set of a protocol run into `dir`.
pub fn write_protocol_outputs(dir: &Path, out: &ProtocolOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let all: Vec<usize> = (0..out.context.grid.len()).collect();
    write_metrics_csv(&dir.join("metrics.csv"), std::slice::from_ref(&out.metrics))?;
    write_trace_csv(&dir.join("trace_pso.csv"), &out.stage_two.pso.trace)?;
    write_power_csv(&dir.join("P_bar.csv"), &out.stage_one.sampled, &out.stage_one.p_bar)?;
    write_sparsity_csv(&dir.join("Z_bar.csv"), &out.stage_one.sampled, &out.stage_one.z_bar)?;
    write_power_csv(&dir.join("P_hat.csv"), &all, &out.stage_one.reconstruction.p_hat)?;
    write_sparsity_csv(&dir.join("Z_hat.csv"), &all, &out.stage_one.reconstruction.z_hat)?;
    write_h_hat_csv(&dir.join("h_hat.csv"), &out.stage_three.surfaces)?;
    File::create(dir.join("report.txt"))?.write_all(protocol_report(out).as_bytes())?;
    Ok(())
}
