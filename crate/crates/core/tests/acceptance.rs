//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits nonzero if any fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sixdma::channel::{exact_power_matrix, planted_user, ChannelSampler, Scenario, C64, SCENARIO_FORMAT_VERSION};
use sixdma::geometry::{candidate_sphere_grid, check_constraints, planar_offsets, rotation_matrix, RotationAngles};
use sixdma::harness::io::write_metrics_csv;
use sixdma::harness::{nmse, prepare, prepare_with_scenario, run_protocol, run_stage_one, ExperimentConfig};
use sixdma::inst_estimation::{build_support, restricted_ls};
use sixdma::placement::{brute_force_select, ergodic_sum_rate_mc, pso_optimize, rms_baseline, PsoConfig};
use sixdma::rng::complex_normal_matrix;
use sixdma::stat_estimation::{
    coordinate_update, nll, nu_objective, nu_star, random_pilots, reconstruct_power, sample_covariance,
    sampled_pose_indices, simulate_uplink_block, DoaDictionary, MlState, PilotMatrix,
};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One covariance-estimation instance: pilots, sample covariance, noise
/// power. A third of the users are inactive.
fn ml_instance(l: usize, k: usize, n: usize, snr_db: f64, rng: &mut ChaCha8Rng) -> (PilotMatrix, DMatrix<C64>, f64) {
    let pilots = random_pilots(l, k, rng).unwrap();
    let mut h = complex_normal_matrix(rng, n, k, 1.0);
    let mut z = vec![1u8; k];
    for (j, zj) in z.iter_mut().enumerate() {
        let gain: f64 = rng.random_range(0.2..2.0);
        h.column_mut(j).scale_mut(gain.sqrt());
        if rng.random::<f64>() < 1.0 / 3.0 {
            *zj = 0;
        }
    }
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let y = simulate_uplink_block(&pilots, &h, &z, sigma2, 0, rng).unwrap().y;
    (pilots, sample_covariance(&y), sigma2)
}

fn columns(p: &PilotMatrix) -> Vec<DVector<C64>> {
    (0..p.users()).map(|k| p.0.column(k).into_owned()).collect()
}

fn direct_sigma(eta: &[f64], pilots: &PilotMatrix, sigma2: f64) -> DMatrix<C64> {
    let l = pilots.length();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(eta.len(), eta.iter().map(|&e| C64::from(e))));
    &pilots.0 * d * pilots.0.adjoint() + DMatrix::identity(l, l).scale(sigma2)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let (mut worst, mut updates) = (f64::NEG_INFINITY, 0usize);
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let (pilots, cov, sigma2) = ml_instance(16, 8, 4, 25.0, &mut rng);
        let x = columns(&pilots);
        let mut state = MlState::new(8, &cov, sigma2);
        let mut prev = nll(&state.eta, &pilots, &cov, sigma2).unwrap();
        let mut order: Vec<usize> = (0..8).collect();
        for _ in 0..30 {
            order.shuffle(&mut rng);
            for &k in &order {
                coordinate_update(&mut state, k, &x[k], &cov);
                let cur = nll(&state.eta, &pilots, &cov, sigma2).unwrap();
                worst = worst.max(cur - prev);
                prev = cur;
                updates += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "largest NLL increase {worst:.2e} over {updates} updates, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + inst);
        let (l, k) = (32, 16);
        let (pilots, cov, sigma2) = ml_instance(l, k, 4, 25.0, &mut rng);
        let x = columns(&pilots);
        let mut state = MlState::new(k, &cov, sigma2);
        for _ in 0..200 {
            let j = rng.random_range(0..k);
            coordinate_update(&mut state, j, &x[j], &cov);
        }
        let direct = direct_sigma(&state.eta, &pilots, sigma2).try_inverse().unwrap();
        worst = worst.max((&state.sigma_inv - &direct).norm() / direct.norm());
    }
    let elapsed = t0.elapsed();
    outcome(
        worst < 1e-8 && elapsed < Duration::from_secs(5),
        format!(
            "worst relative Frobenius gap {worst:.2e} (L=32, 200 updates), {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
        let (pilots, cov, sigma2) = ml_instance(12, 6, 4, 20.0, &mut rng);
        let x = columns(&pilots);
        let mut state = MlState::new(6, &cov, sigma2);
        for _ in 0..rng.random_range(0..20) {
            let j = rng.random_range(0..6);
            coordinate_update(&mut state, j, &x[j], &cov);
        }
        let k = rng.random_range(0..6);
        let c = x[k].dotc(&(&state.sigma_inv * &x[k])).re;
        let f = |nu: f64| nu_objective(&state, &x[k], &cov, nu);
        // the objective is unimodal on (-1/c, inf); grow the bracket until it
        // turns upward
        let lo = -1.0 / c * (1.0 - 1e-12);
        let mut hi = 1.0 / c;
        while f(2.0 * hi) < f(hi) {
            hi *= 2.0;
        }
        let numeric = golden_section(f, lo, 2.0 * hi);
        let analytic = nu_star(&state, &x[k], &cov);
        worst = worst.max((numeric - analytic).abs() / analytic.abs().max(1.0));
    }
    outcome(
        worst < 1e-6,
        format!("worst gap to golden-section minimizer {worst:.2e} over 100 cases"),
    )
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let base = ExperimentConfig::default();
    let rate_at = |l: usize| -> Vec<f64> {
        let mut cfg = base.clone();
        cfg.estimation.pilot_length = l;
        (0..20u64)
            .map(|seed| {
                let ctx = prepare(&cfg, seed).unwrap();
                let s1 = run_stage_one(&ctx).unwrap();
                let truth = ctx.truth.select_rows(&s1.sampled);
                sixdma::harness::detection_error_rate(&truth, &s1.z_bar).unwrap()
            })
            .collect()
    };
    let (short, long) = (mean(&rate_at(10)), mean(&rate_at(40)));
    let elapsed = t0.elapsed();
    outcome(
        long < short && long < 0.1 && elapsed < Duration::from_secs(300),
        format!(
            "seed-mean detection error L=10: {short:.4}, L=40: {long:.4} (20 seeds), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Single-path users whose arrival directions are dictionary points.
fn planted_scenario(cfg: &ExperimentConfig, dict: &DoaDictionary, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let users = (0..cfg.scenario.users)
        .map(|_| {
            let g = rng.random_range(0..dict.len());
            let power = 10f64.powf(rng.random_range(-8.5..-7.5));
            planted_user(dict.directions[g], power, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Scenario {
        version: SCENARIO_FORMAT_VERSION,
        seed,
        config: cfg.scenario.clone(),
        users,
    }
}

fn criterion_5() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.estimation.pilot_length = 60;
    let dict = DoaDictionary::fibonacci(cfg.estimation.dictionary_size).unwrap();
    let sampled = sampled_pose_indices(cfg.grid.candidates, cfg.grid.sampled).unwrap();
    let (mut exact, mut noisy) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let ctx = prepare_with_scenario(&cfg, planted_scenario(&cfg, &dict, seed), seed).unwrap();
        let p_bar = ctx.power.select_rows(&sampled);
        let z_bar = ctx.truth.select_rows(&sampled);
        let rec = reconstruct_power(
            &p_bar,
            &z_bar,
            &ctx.grid,
            &sampled,
            &dict,
            &cfg.scenario.pattern,
            ctx.epsilon,
            cfg.estimation.reconstruction_fit,
        )
        .unwrap();
        exact.push(nmse(&ctx.power.0, &rec.p_hat.0).unwrap());
        let s1 = run_stage_one(&ctx).unwrap();
        noisy.push(nmse(&ctx.power.0, &s1.reconstruction.p_hat.0).unwrap());
    }
    let worst_exact = exact.iter().copied().fold(0.0, f64::max);
    let noisy_mean = mean(&noisy);
    outcome(
        worst_exact < 1e-9 && noisy_mean < 0.1,
        format!("exact sampled powers: worst NMSE_p {worst_exact:.2e}; estimated at L=60: seed-mean {noisy_mean:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let (n, k, l) = (4, 12, 8);
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let pilots = random_pilots(l, k, &mut rng).unwrap();
        let active = rng.random_range(1..=l);
        let mut users: Vec<usize> = (0..k).collect();
        users.shuffle(&mut rng);
        let mut z = vec![0u8; k];
        for &u in &users[..active] {
            z[u] = 1;
        }
        let mut h = complex_normal_matrix(&mut rng, n, k, 1.0);
        for (j, &zj) in z.iter().enumerate() {
            if zj == 0 {
                h.column_mut(j).fill(C64::new(0.0, 0.0));
            }
        }
        let y = simulate_uplink_block(&pilots, &h, &z, 0.0, 0, &mut rng).unwrap().y;
        let est = restricted_ls(&y, &pilots, &build_support(&z, n)).unwrap();
        worst = worst.max(nmse(&h, &est.matrix(n)).unwrap());
    }
    outcome(
        worst < 1e-12,
        format!("worst NMSE_c {worst:.2e} over 20 noiseless seeds (|S| <= L = 8)"),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for l in [12usize, 24, 48] {
        let mut cfg = ExperimentConfig::default();
        cfg.estimation.pilot_length = l;
        cfg.estimation.inst_pilot_length = Some(l);
        let runs: Vec<(f64, f64)> = (0..20u64)
            .map(|seed| {
                let m = run_protocol(&cfg, seed).unwrap().metrics;
                (m.nmse_c, m.nmse_c_plain)
            })
            .collect();
        let restricted = mean(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
        let plain = mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
        pass &= restricted < plain;
        parts.push(format!("L={l}: {restricted:.3e} vs {plain:.3e}"));
    }
    outcome(
        pass,
        format!("seed-mean NMSE_c restricted vs plain, K=12: {}", parts.join("; ")),
    )
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig::default();
    let ctx = prepare(&cfg, 0).unwrap();
    let exact = exact_power_matrix(&ctx.scenario.users, &ctx.grid, &cfg.scenario.pattern);
    let problem = ctx.problem(&exact);
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut subsets = Vec::new();
    while subsets.len() < 50 {
        let mut idx: Vec<usize> = (0..ctx.grid.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.grid.surfaces);
        idx.sort_unstable();
        if problem.is_feasible(&idx) {
            subsets.push(idx);
        }
    }
    let results: Vec<(f64, f64, f64)> = subsets
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let sampler = ChannelSampler::new(
                &ctx.scenario.users,
                &ctx.grid,
                idx,
                cfg.scenario.wavelength,
                &cfg.scenario.pattern,
            );
            let mut r = ChaCha8Rng::seed_from_u64(8000 + i as u64);
            let (mc, se) = ergodic_sum_rate_mc(&sampler, ctx.noise.snr(), 500, &mut r).unwrap();
            (mc, se, problem.rate(idx))
        })
        .collect();
    let violations = results.iter().filter(|(mc, se, bound)| *mc > bound + 3.0 * se).count();
    let tightest = results
        .iter()
        .map(|(mc, se, bound)| (mc - bound) / se.max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        violations == 0,
        format!("{violations} of 50 subsets above bound + 3 SE (largest (MC - bound)/SE = {tightest:.2})"),
    )
}

fn criterion_9() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.candidates = 12;
    cfg.grid.sampled = 12;
    cfg.grid.surfaces = 3;
    cfg.scenario.users = 6;
    let runs: Vec<(f64, f64, bool)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let ctx = prepare(&cfg, seed).unwrap();
            let problem = ctx.problem(&ctx.power);
            let best = problem.rate(&brute_force_select(&problem).unwrap().indices());
            let pso = pso_optimize(&problem, &PsoConfig { seed, ..cfg.pso }).unwrap();
            let monotone = pso.trace.windows(2).all(|w| w[1] >= w[0]);
            (pso.rate, best, monotone)
        })
        .collect();
    let close = runs.iter().filter(|(r, b, _)| *r >= 0.95 * b).count();
    let monotone = runs.iter().all(|r| r.2);
    let worst = runs.iter().map(|(r, b, _)| r / b).fold(f64::INFINITY, f64::min);
    outcome(
        close >= 18 && monotone,
        format!("{close}/20 seeds within 5% of optimum (worst ratio {worst:.4}); traces non-decreasing: {monotone}"),
    )
}

fn criterion_10() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.surfaces = 8;
    cfg.scenario.users = 16;
    let runs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let ctx = prepare(&cfg, seed).unwrap();
            let problem = ctx.problem(&ctx.power);
            let pso = pso_optimize(&problem, &PsoConfig { seed, ..cfg.pso }).unwrap();
            let rms = rms_baseline(&problem, 100, seed).unwrap();
            (pso.rate, problem.rate(&rms.indices()))
        })
        .collect();
    let pso = mean(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let rms = mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    outcome(
        pso >= rms,
        format!("seed-mean rate PSO {pso:.3} vs RMS {rms:.3} bits/s/Hz (M=64, B=8, K=16)"),
    )
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1100);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let u = RotationAngles::new(
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let r = rotation_matrix(&u);
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        worst = worst.max(orth).max((r.determinant() - 1.0).abs());
    }
    let mut violations = 0;
    for m in [16usize, 64, 256] {
        let grid = candidate_sphere_grid(m, 0.5, planar_offsets(4, 0.0625).unwrap()).unwrap();
        violations += check_constraints(&grid.poses, 0.0).len();
    }
    outcome(
        worst < 1e-12 && violations == 0,
        format!("rotation orthogonality/determinant error {worst:.2e}; sphere-grid violations {violations} (M = 16, 64, 256)"),
    )
}

fn criterion_12() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.evaluation.ergodic_trials = 50;
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = [1usize, 4, 4]
        .iter()
        .enumerate()
        .map(|(i, &threads)| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let out = pool.install(|| run_protocol(&cfg, 7)).unwrap();
            let path = dir.path().join(format!("metrics_{i}.csv"));
            write_metrics_csv(&path, std::slice::from_ref(&out.metrics)).unwrap();
            std::fs::read(&path).unwrap()
        })
        .collect();
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!(
            "metrics.csv identical across runs with 1, 4 and 4 threads: {same} ({} bytes)",
            files[0].len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("NLL monotonicity", criterion_1),
        ("rank-one inverse oracle", criterion_2),
        ("closed-form step stationarity", criterion_3),
        ("detection error trend", criterion_4),
        ("power reconstruction", criterion_5),
        ("restricted LS exactness", criterion_6),
        ("restricted vs plain LS", criterion_7),
        ("Jensen rate bound", criterion_8),
        ("PSO vs brute force", criterion_9),
        ("PSO vs random max sampling", criterion_10),
        ("geometry invariants", criterion_11),
        ("determinism", criterion_12),
    ];
    // libtest-style filter: `cargo test --test acceptance -- 7` runs criterion 7
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = run();
        println!(
            "{} {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            id,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
