use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sixdma::channel::{generate_scenario, Scenario};
use sixdma::harness::io::{
    estimation_report, read_power_csv, read_sparsity_csv, write_h_hat_csv, write_power_csv, write_protocol_outputs,
    write_sparsity_csv, write_trace_csv,
};
use sixdma::harness::{
    prepare, prepare_with_scenario, run_protocol_with_scenario, run_stage_one, run_stage_three, run_stage_two, sweep,
    write_sweep_outputs, Context, ExperimentConfig, SweepAxis,
};
use sixdma::{Error, Result};

#[derive(Parser)]
#[command(name = "sixdma", version, about = "Movable-antenna base station simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a configuration key, e.g. `--set grid.surfaces=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a user population and write scenario.json.
    GenScenario,
    /// Stage I: statistical estimation at the sampled poses and reconstruction.
    EstimateStat {
        /// Replay a saved scenario instead of drawing one from the seed.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Stage II: pose selection from a power matrix over all candidates.
    Optimize {
        /// Power CSV, e.g. P_hat.csv from estimate-stat.
        #[arg(long)]
        power: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Stage III: instantaneous estimation at given poses.
    EstimateInst {
        /// Comma-separated pose indices.
        #[arg(long, value_delimiter = ',', required = true)]
        poses: Vec<usize>,
        /// Sparsity CSV over all candidates, e.g. Z_hat.csv.
        #[arg(long)]
        sparsity: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// All three stages with metrics.
    RunProtocol {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Protocol runs over one axis and several seeds.
    Sweep {
        /// pilot_length, transmit_power or user_count; defaults to the config.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override '{item}' is not KEY=VALUE")))?;
        cfg.set_key(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn context(cfg: &ExperimentConfig, seed: u64, scenario: Option<&Path>) -> Result<Context> {
    match scenario {
        Some(path) => prepare_with_scenario(cfg, Scenario::load(path)?, seed),
        None => prepare(cfg, seed),
    }
}

fn all_rows(n: usize, rows: &[usize], what: &str) -> Result<()> {
    if rows.len() != n || rows.iter().enumerate().any(|(i, &r)| i != r) {
        return Err(Error::ShapeMismatch(format!("{what} must list poses 0..{n} in order")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let seed = cli.common.seed;
    let out = &cli.common.out;
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::GenScenario => {
            let scenario = generate_scenario(&cfg.scenario, seed)?;
            scenario.save(&out.join("scenario.json"))?;
        }
        Command::EstimateStat { scenario } => {
            let ctx = context(&cfg, seed, scenario.as_deref())?;
            let s1 = run_stage_one(&ctx)?;
            let all: Vec<usize> = (0..ctx.grid.len()).collect();
            write_power_csv(&out.join("P_bar.csv"), &s1.sampled, &s1.p_bar)?;
            write_sparsity_csv(&out.join("Z_bar.csv"), &s1.sampled, &s1.z_bar)?;
            write_power_csv(&out.join("P_hat.csv"), &all, &s1.reconstruction.p_hat)?;
            write_sparsity_csv(&out.join("Z_hat.csv"), &all, &s1.reconstruction.z_hat)?;
            let mut report = format!("seed: {seed}\nepsilon: {:e}\n", ctx.epsilon);
            report.push_str(&estimation_report(&s1.estimates));
            std::fs::write(out.join("report.txt"), report)?;
        }
        Command::Optimize { power, scenario } => {
            let ctx = context(&cfg, seed, scenario.as_deref())?;
            let (rows, p) = read_power_csv(&power)?;
            all_rows(ctx.grid.len(), &rows, "power file")?;
            let s2 = run_stage_two(&ctx, &p)?;
            write_trace_csv(&out.join("trace_pso.csv"), &s2.pso.trace)?;
            let record = serde_json::json!({
                "selection": s2.pso.selection.indices(),
                "rate": s2.pso.rate,
                "repaired": s2.pso.repaired,
                "rms_selection": s2.rms.as_ref().map(|s| s.indices()),
                "rms_rate": s2.rms.as_ref().map(|s| ctx.problem(&p).rate(&s.indices())),
            });
            std::fs::write(out.join("selection.json"), serde_json::to_string_pretty(&record)?)?;
        }
        Command::EstimateInst {
            poses,
            sparsity,
            scenario,
        } => {
            let ctx = context(&cfg, seed, scenario.as_deref())?;
            if let Some(&bad) = poses.iter().find(|&&m| m >= ctx.grid.len()) {
                return Err(Error::InvalidArgument(format!(
                    "pose {bad} outside the grid of {}",
                    ctx.grid.len()
                )));
            }
            let (rows, z) = read_sparsity_csv(&sparsity)?;
            all_rows(ctx.grid.len(), &rows, "sparsity file")?;
            if z.0.ncols() != ctx.users() {
                return Err(Error::ShapeMismatch(format!(
                    "sparsity file has {} users, scenario {}",
                    z.0.ncols(),
                    ctx.users()
                )));
            }
            let s3 = run_stage_three(&ctx, &poses, &z)?;
            write_h_hat_csv(&out.join("h_hat.csv"), &s3.surfaces)?;
            let record = serde_json::json!({ "nmse_c": s3.nmse_c, "nmse_c_plain": s3.nmse_c_plain });
            std::fs::write(out.join("inst.json"), serde_json::to_string_pretty(&record)?)?;
        }
        Command::RunProtocol { scenario } => {
            let scenario = match scenario {
                Some(path) => Scenario::load(&path)?,
                None => generate_scenario(&cfg.scenario, seed)?,
            };
            let output = run_protocol_with_scenario(&cfg, scenario, seed)?;
            write_protocol_outputs(out, &output)?;
        }
        Command::Sweep { axis, values, seeds } => {
            let axis = match axis {
                Some(a) => SweepAxis::parse(&a)?,
                None => cfg.sweep.axis,
            };
            let values = values.unwrap_or_else(|| cfg.sweep.values.clone());
            let seeds = seeds.unwrap_or_else(|| cfg.sweep.seeds.clone());
            let result = sweep(&cfg, axis, &values, &seeds)?;
            write_sweep_outputs(out, &result)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!(
                "{}",
                serde_json::json!({ "error": "invalid-argument", "message": e.to_string() })
            );
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
