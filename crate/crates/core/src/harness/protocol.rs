//! The three-stage protocol for one seed.
//!
//! Stage I visits the sampled poses, estimates the per-user powers there and
//! extrapolates them to every candidate pose. Stage II picks the surface
//! poses from the estimated powers. Stage III estimates the instantaneous
//! channels at the chosen poses using the estimated sparsity.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{detection_error, nmse, MetricsReport, StageTimings};
use crate::channel::{
    generate_scenario, true_power_matrix, ChannelSampler, PowerMatrix, Scenario, SparsityMatrix, C64,
};
use crate::error::{Error, Result};
use crate::geometry::{candidate_sphere_grid, planar_offsets, CandidateGrid};
use crate::inst_estimation::{build_support, plain_ls, restricted_ls, InstEstimate};
use crate::placement::{ergodic_sum_rate_mc, pso_optimize, rms_baseline, PsoResult, SelectionProblem, SelectionVector};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::stat_estimation::{
    assign_groups, generate_pilots, jdc_estimate, random_pilots, reconstruct_power, sampled_pose_indices,
    simulate_uplink_block, DoaDictionary, GroupAssignment, JdcConfig, PoseEstimate, Reconstruction,
};

/// Noise levels of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Physical noise power, watts. Zero for noiseless runs.
    pub sigma2: f64,
    /// Noise power relative to the transmit power; this is what is added to
    /// observations made with unit-power pilots.
    pub sim_sigma2: f64,
    /// Noise power assumed by the estimators and the rate bound.
    pub est_sigma2: f64,
}

impl NoiseModel {
    /// Transmit power over noise power, as used by the rate bound.
    pub fn snr(&self) -> f64 {
        1.0 / self.est_sigma2
    }
}

/// Ground truth and settings shared by the stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub scenario: Scenario,
    pub grid: CandidateGrid,
    pub power: PowerMatrix,
    pub truth: SparsityMatrix,
    pub noise: NoiseModel,
    pub epsilon: f64,
}

impl Context {
    pub fn antennas(&self) -> usize {
        self.grid.antennas()
    }

    pub fn users(&self) -> usize {
        self.scenario.users.len()
    }

    /// Selection problem over `power` with this run's spacing and budget.
    pub fn problem<'a>(&'a self, power: &'a PowerMatrix) -> SelectionProblem<'a> {
        SelectionProblem {
            power,
            distances: &self.grid.distance_matrix,
            budget: self.config.grid.surfaces,
            d_min: self.config.grid.d_min,
            snr: self.noise.snr(),
        }
    }

    fn sampler(&self, poses: &[usize]) -> ChannelSampler {
        let s = &self.config.scenario;
        ChannelSampler::new(&self.scenario.users, &self.grid, poses, s.wavelength, &s.pattern)
    }
}

pub fn build_grid(config: &ExperimentConfig) -> Result<CandidateGrid> {
    let g = &config.grid;
    let spacing = g.antenna_spacing.unwrap_or(config.scenario.wavelength / 2.0);
    candidate_sphere_grid(g.candidates, g.radius(), planar_offsets(g.antennas, spacing)?)
}

fn noise_model(config: &ExperimentConfig, power: &PowerMatrix, antennas: usize) -> Result<NoiseModel> {
    let active: Vec<f64> = power.0.iter().copied().filter(|&v| v > 0.0).collect();
    if active.is_empty() {
        return Err(Error::InvalidArgument("no user reaches any candidate pose".into()));
    }
    // mean per-antenna received power over active links, per watt transmitted
    let mean_link = active.iter().sum::<f64>() / active.len() as f64 / antennas as f64;
    let s = &config.scenario;
    let sigma2 = match (s.noise_power, s.snr_db) {
        (Some(v), _) => v,
        (None, Some(db)) => s.snr_reference_power.unwrap_or(s.transmit_power) * mean_link / 10f64.powf(db / 10.0),
        (None, None) => 0.0,
    };
    let sim_sigma2 = sigma2 / s.transmit_power;
    let est_sigma2 = if sim_sigma2 > 0.0 {
        sim_sigma2
    } else {
        config.estimation.noiseless_floor * mean_link
    };
    Ok(NoiseModel {
        sigma2,
        sim_sigma2,
        est_sigma2,
    })
}

/// Draws the scenario for `seed` and derives the ground truth.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Context> {
    config.validate()?;
    let scenario = generate_scenario(&config.scenario, seed)?;
    prepare_with_scenario(config, scenario, seed)
}

/// Like [`prepare`] with a given user population. Noise and threshold
/// settings still come from `config`.
pub fn prepare_with_scenario(config: &ExperimentConfig, scenario: Scenario, seed: u64) -> Result<Context> {
    config.validate()?;
    if scenario.users.is_empty() {
        return Err(Error::InvalidArgument("scenario has no users".into()));
    }
    let grid = build_grid(config)?;
    let pattern = &config.scenario.pattern;
    let (power, _) = true_power_matrix(&scenario.users, &grid, pattern, f64::INFINITY);
    let noise = noise_model(config, &power, grid.antennas())?;
    let epsilon = config
        .estimation
        .epsilon
        .unwrap_or(config.estimation.epsilon_noise_factor * grid.antennas() as f64 * noise.est_sigma2);
    let truth = power.threshold(epsilon);
    Ok(Context {
        config: config.clone(),
        seed,
        scenario,
        grid,
        power,
        truth,
        noise,
        epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct StageOne {
    pub sampled: Vec<usize>,
    pub groups: Vec<GroupAssignment>,
    /// One estimate per sampled pose, in sampled order.
    pub estimates: Vec<PoseEstimate>,
    pub p_bar: PowerMatrix,
    pub z_bar: SparsityMatrix,
    pub reconstruction: Reconstruction,
}

/// Pilot observations and power estimation at the sampled poses, then
/// reconstruction over the whole grid.
pub fn run_stage_one(ctx: &Context) -> Result<StageOne> {
    let cfg = &ctx.config;
    let users = ctx.users();
    let sampled = sampled_pose_indices(cfg.grid.candidates, cfg.grid.sampled)?;
    let groups = assign_groups(&sampled, cfg.grid.surfaces)?;
    let pilots = generate_pilots(cfg.estimation.pilot_length, users, ctx.seed)?;
    let jdc = JdcConfig {
        iterations: cfg.estimation.iterations,
        epsilon: ctx.epsilon,
        sigma2: ctx.noise.est_sigma2,
        seed: ctx.seed,
    };
    let ones = vec![1u8; users];
    let outputs = groups
        .par_iter()
        .map(|group| {
            let blocks = group
                .poses
                .iter()
                .map(|&m| {
                    let h = ctx
                        .sampler(&[m])
                        .draw(&mut stream_rng(ctx.seed, Stream::StatFading, m as u64));
                    let mut noise = stream_rng(ctx.seed, Stream::StatNoise, m as u64);
                    simulate_uplink_block(&pilots, &h.entries, &ones, ctx.noise.sim_sigma2, m, &mut noise)
                })
                .collect::<Result<Vec<_>>>()?;
            jdc_estimate(group, &pilots, &blocks, &jdc)
        })
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<PoseEstimate> = outputs.into_iter().flat_map(|o| o.estimates).collect();
    let p_bar = PowerMatrix(DMatrix::from_fn(sampled.len(), users, |j, k| estimates[j].power[k]));
    let z_bar = SparsityMatrix(DMatrix::from_fn(sampled.len(), users, |j, k| estimates[j].detected[k]));
    let dictionary = DoaDictionary::fibonacci(cfg.estimation.dictionary_size)?;
    let reconstruction = reconstruct_power(
        &p_bar,
        &z_bar,
        &ctx.grid,
        &sampled,
        &dictionary,
        &cfg.scenario.pattern,
        ctx.epsilon,
        cfg.estimation.reconstruction_fit,
    )?;
    Ok(StageOne {
        sampled,
        groups,
        estimates,
        p_bar,
        z_bar,
        reconstruction,
    })
}

#[derive(Debug, Clone)]
pub struct StageTwo {
    pub pso: PsoResult,
    pub rms: Option<SelectionVector>,
}

/// Pose selection on a (usually estimated) power matrix.
pub fn run_stage_two(ctx: &Context, power: &PowerMatrix) -> Result<StageTwo> {
    let problem = ctx.problem(power);
    let mut pso_cfg = ctx.config.pso;
    pso_cfg.seed = derive_seed(ctx.seed, Stream::Pso, ctx.config.pso.seed);
    let pso = pso_optimize(&problem, &pso_cfg)?;
    let rms = match ctx.config.evaluation.rms_samples {
        0 => None,
        n => Some(rms_baseline(&problem, n, ctx.seed)?),
    };
    Ok(StageTwo { pso, rms })
}

#[derive(Debug, Clone)]
pub struct SurfaceEstimate {
    pub pose: usize,
    /// True channel block, `N x K`.
    pub truth: DMatrix<C64>,
    /// `None` when the restricted problem was rank deficient.
    pub restricted: Option<InstEstimate>,
    pub plain: Option<InstEstimate>,
}

#[derive(Debug, Clone)]
pub struct StageThree {
    pub surfaces: Vec<SurfaceEstimate>,
    pub nmse_c: f64,
    pub nmse_c_plain: f64,
}

fn aggregate_nmse(surfaces: &[SurfaceEstimate], pick: impl Fn(&SurfaceEstimate) -> Option<&InstEstimate>) -> f64 {
    let (mut err, mut total) = (0.0, 0.0);
    for s in surfaces {
        let Some(est) = pick(s) else { return f64::NAN };
        err += (&s.truth - est.matrix(s.truth.nrows())).norm_squared();
        total += s.truth.norm_squared();
    }
    if total > 0.0 {
        err / total
    } else {
        f64::NAN
    }
}

fn rank_tolerant(r: Result<InstEstimate>) -> Result<Option<InstEstimate>> {
    match r {
        Ok(e) => Ok(Some(e)),
        Err(Error::RankDeficient(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One coherence block of pilots at `poses`, estimated with the support rows
/// of `z_hat`.
pub fn run_stage_three(ctx: &Context, poses: &[usize], z_hat: &SparsityMatrix) -> Result<StageThree> {
    let users = ctx.users();
    let n = ctx.antennas();
    let pilots = random_pilots(
        ctx.config.estimation.inst_pilot_length(),
        users,
        &mut stream_rng(ctx.seed, Stream::InstPilots, 0),
    )?;
    let ones = vec![1u8; users];
    let surfaces = poses
        .par_iter()
        .map(|&m| {
            let truth = ctx
                .sampler(&[m])
                .draw(&mut stream_rng(ctx.seed, Stream::InstFading, m as u64))
                .entries;
            let mut noise = stream_rng(ctx.seed, Stream::InstNoise, m as u64);
            let y = simulate_uplink_block(&pilots, &truth, &ones, ctx.noise.sim_sigma2, m, &mut noise)?.y;
            let restricted = rank_tolerant(restricted_ls(&y, &pilots, &build_support(&z_hat.row_vec(m), n)))?;
            let plain = if ctx.config.evaluation.plain_ls {
                rank_tolerant(plain_ls(&y, &pilots))?
            } else {
                None
            };
            Ok(SurfaceEstimate {
                pose: m,
                truth,
                restricted,
                plain,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nmse_c = aggregate_nmse(&surfaces, |s| s.restricted.as_ref());
    let nmse_c_plain = aggregate_nmse(&surfaces, |s| s.plain.as_ref());
    Ok(StageThree {
        surfaces,
        nmse_c,
        nmse_c_plain,
    })
}

#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    pub context: Context,
    pub stage_one: StageOne,
    pub stage_two: StageTwo,
    pub stage_three: StageThree,
    pub metrics: MetricsReport,
    pub timings: StageTimings,
}

/// All three stages for one seed, with metrics against the ground truth.
pub fn run_protocol(config: &ExperimentConfig, seed: u64) -> Result<ProtocolOutput> {
    let t0 = Instant::now();
    let context = prepare(config, seed)?;
    run_prepared(context, t0)
}

/// [`run_protocol`] on a given user population.
pub fn run_protocol_with_scenario(config: &ExperimentConfig, scenario: Scenario, seed: u64) -> Result<ProtocolOutput> {
    let t0 = Instant::now();
    let context = prepare_with_scenario(config, scenario, seed)?;
    run_prepared(context, t0)
}

fn run_prepared(ctx: Context, t0: Instant) -> Result<ProtocolOutput> {
    let mut timings = StageTimings {
        setup: t0.elapsed(),
        ..Default::default()
    };

    let t = Instant::now();
    let stage_one = run_stage_one(&ctx)?;
    timings.stage_one = t.elapsed();

    let t = Instant::now();
    let rec = &stage_one.reconstruction;
    let stage_two = run_stage_two(&ctx, &rec.p_hat)?;
    timings.stage_two = t.elapsed();

    let t = Instant::now();
    let chosen = stage_two.pso.selection.indices();
    let stage_three = run_stage_three(&ctx, &chosen, &rec.z_hat)?;
    let ergodic_rate = match ctx.config.evaluation.ergodic_trials {
        0 => f64::NAN,
        trials => {
            let mut rng = stream_rng(ctx.seed, Stream::Ergodic, 0);
            ergodic_sum_rate_mc(&ctx.sampler(&chosen), ctx.noise.snr(), trials, &mut rng)?.0
        }
    };
    timings.stage_three = t.elapsed();

    let sampled_truth = ctx.truth.select_rows(&stage_one.sampled);
    let detection = detection_error(&sampled_truth, &stage_one.z_bar)?;
    let full = detection_error(&ctx.truth, &rec.z_hat)?;
    let true_problem = ctx.problem(&ctx.power);
    let metrics = MetricsReport {
        seed: ctx.seed,
        detection_error_rate: detection.total(),
        missed_detection: detection.missed,
        false_alarm: detection.false_alarm,
        detection_error_rate_full: full.total(),
        nmse_p: nmse(&ctx.power.0, &rec.p_hat.0).unwrap_or(f64::NAN),
        nmse_c: stage_three.nmse_c,
        nmse_c_plain: stage_three.nmse_c_plain,
        sum_rate: true_problem.rate(&chosen),
        sum_rate_rms: stage_two
            .rms
            .as_ref()
            .map_or(f64::NAN, |s| true_problem.rate(&s.indices())),
        sum_rate_estimated: stage_two.pso.rate,
        ergodic_rate,
        pso_repaired: u8::from(stage_two.pso.repaired),
        skipped_users: rec.skipped.len(),
    };
    Ok(ProtocolOutput {
        context: ctx,
        stage_one,
        stage_two,
        stage_three,
        metrics,
        timings,
    })
}
