use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use super::{SelectionProblem, SelectionVector};
use crate::channel::{ChannelSampler, C64};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Largest number of subsets the exhaustive search will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

const RMS_ATTEMPTS: usize = 10_000;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive maximization of the rate bound over feasible selections. Ties
/// keep the lexicographically first subset.
pub fn brute_force_select(problem: &SelectionProblem<'_>) -> Result<SelectionVector> {
    problem.validate()?;
    let m = problem.power.nrows();
    let count = binomial(m, problem.budget);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(format!(
            "C({m}, {}) = {count:e} subsets",
            problem.budget
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in (0..m).combinations(problem.budget) {
        if problem.conflicts(&subset) > 0 {
            continue;
        }
        let r = problem.rate(&subset);
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((subset, r));
        }
    }
    best.map(|(s, _)| SelectionVector::from_indices(m, &s))
        .ok_or_else(|| Error::Infeasible("no subset satisfies the spacing constraint".into()))
}

/// Random max sampling: the best of `samples` random feasible subsets.
pub fn rms_baseline(problem: &SelectionProblem<'_>, samples: usize, seed: u64) -> Result<SelectionVector> {
    problem.validate()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let m = problem.power.nrows();
    let mut rng = stream_rng(seed, Stream::Rms, 0);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..samples {
        let mut found = None;
        for _ in 0..RMS_ATTEMPTS {
            let mut s = sample(&mut rng, m, problem.budget).into_vec();
            if problem.conflicts(&s) == 0 {
                s.sort_unstable();
                found = Some(s);
                break;
            }
        }
        let s = found.ok_or_else(|| Error::Infeasible(format!("no feasible random subset in {RMS_ATTEMPTS} draws")))?;
        let r = problem.rate(&s);
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((s, r));
        }
    }
    let (s, _) = best.expect("samples >= 1");
    Ok(SelectionVector::from_indices(m, &s))
}

/// `log2 det(I + snr H^H H)`.
fn log2_det_gram(h: &DMatrix<C64>, snr: f64) -> Result<f64> {
    let k = h.ncols();
    let mut g = h.adjoint() * h * C64::from(snr);
    for i in 0..k {
        g[(i, i)] += C64::from(1.0);
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("I + snr H^H H is not positive definite".into()))?;
    Ok(chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.log2()).sum())
}

/// Monte-Carlo ergodic sum rate of the poses covered by `sampler` (the
/// selected ones) over fresh phase draws. Returns the mean and its standard
/// error.
pub fn ergodic_sum_rate_mc<R: Rng + ?Sized>(
    sampler: &ChannelSampler,
    snr: f64,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if sampler.pose_indices().is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        values.push(log2_det_gram(&sampler.draw(rng).entries, snr)?);
    }
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if trials > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}
