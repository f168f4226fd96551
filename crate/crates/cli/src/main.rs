//! `battcal`: simulate the cell model, generate study datasets, and run
//! estimations and multi-trial experiments from TOML configs.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use battcal::cell::{simulate, CellParameters, CurrentProfile};
use battcal::estimator::{estimate_group, plausible_bounds, write_trace_csv, EstimateError, EstimationProblem, Target};
use battcal::scenario::{build_profile, run_experiment, truth_generate, Dataset, DatasetSidecar, ExperimentConfig};
use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{load, load_cell, load_ocv, resolve, EstimateConfig, GenerateConfig, SimulateConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration (exit 1).
    #[error("{0}")]
    Config(String),
    /// Simulation or estimation failed (exit 2).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "battcal", version, about = "Battery model parameter estimation with a GP discrepancy term")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cell model and write its trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a truth/measurement dataset plus a TOML sidecar.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Sidecar path (default: the output path with a .toml extension).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Overrides the noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate one parameter group from a dataset.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the dataset named in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Objective trace CSV (default: the output path with a .trace.csv extension).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Overrides the swarm seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a multi-trial estimation experiment.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Overrides the base trial seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of trials.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { config, output } => cmd_simulate(&config, &output),
        Command::Generate { config, output, sidecar, seed } => cmd_generate(&config, &output, sidecar, seed),
        Command::Estimate { config, dataset, output, trace, seed } => {
            cmd_estimate(&config, dataset, &output, trace, seed)
        }
        Command::Experiment { config, output_dir, seed, trials } => cmd_experiment(&config, &output_dir, seed, trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn read_profile_csv(path: &Path) -> Result<CurrentProfile, CliError> {
    let cfg_err = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| cfg_err(e.to_string()))?;
    let headers = r.headers().map_err(|e| cfg_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| cfg_err(format!("missing column {name}")))
    };
    let (t_col, i_col) = (col("time_s")?, col("current_A")?);
    let mut samples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| cfg_err(e.to_string()))?;
        let parse = |j: usize| -> Result<f64, CliError> {
            rec.get(j)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| cfg_err(format!("row {}: column {} is not a number", row + 1, headers[j].to_string())))
        };
        samples.push((parse(t_col)?, parse(i_col)?));
    }
    CurrentProfile::from_samples(&samples).map_err(|e| cfg_err(e.to_string()))
}

fn cmd_simulate(config_path: &Path, output: &Path) -> Result<(), CliError> {
    let cfg: SimulateConfig = load(config_path)?;
    let params = load_cell(config_path, cfg.cell.as_ref())?.unwrap_or_default();
    let ocv = load_ocv(config_path, cfg.ocv.as_ref())?;
    let profile = match (&cfg.profile, &cfg.profile_csv) {
        (Some(spec), None) => {
            build_profile(spec, params.cell.nominal_capacity_ah).map_err(|e| CliError::Config(format!("profile: {e}")))?
        }
        (None, Some(p)) => read_profile_csv(&resolve(config_path, p))?,
        _ => {
            return Err(CliError::Config(format!(
                "{}: set exactly one of `profile` and `profile_csv`",
                config_path.display()
            )))
        }
    };
    let traj = simulate(&profile, &params, &ocv, cfg.initial_soc, &cfg.options)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if traj.truncated {
        log::warn!("voltage cutoff reached after {} of {} samples", traj.len(), profile.len());
    }
    traj.write_csv(create(output)?).map_err(csv_err(output))
}

fn cmd_generate(config_path: &Path, output: &Path, sidecar: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: GenerateConfig = load(config_path)?;
    let mut truth = cfg.truth;
    if let Some(p) = load_cell(config_path, cfg.cell.as_ref())? {
        truth.params = p;
    }
    if let Some(s) = seed {
        truth.noise.seed = s;
    }
    truth.validate().map_err(|e| CliError::Config(format!("truth: {e}")))?;
    let ocv = load_ocv(config_path, cfg.ocv.as_ref())?;
    let profile = build_profile(&cfg.profile, truth.params.cell.nominal_capacity_ah)
        .map_err(|e| CliError::Config(format!("profile: {e}")))?;
    let data = truth_generate(&truth, &profile, cfg.initial_soc, &ocv).map_err(|e| CliError::Runtime(e.to_string()))?;
    data.write_csv(create(output)?).map_err(csv_err(output))?;
    let side = DatasetSidecar { initial_soc: cfg.initial_soc, profile: cfg.profile, truth };
    let side_path = sidecar.unwrap_or_else(|| output.with_extension("toml"));
    let text = toml::to_string(&side).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(&side_path, &text)
}

fn cmd_estimate(
    config_path: &Path,
    dataset: Option<PathBuf>,
    output: &Path,
    trace: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg: EstimateConfig = load(config_path)?;
    let data_path = match (dataset, &cfg.dataset) {
        (Some(p), _) => p,
        (None, Some(p)) => resolve(config_path, p),
        (None, None) => {
            return Err(CliError::Config(format!("{}: no `dataset` given (config key or --dataset)", config_path.display())))
        }
    };
    let file = File::open(&data_path).map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;
    let data = Dataset::read_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;
    let profile = data.profile().map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;
    let start: CellParameters = load_cell(config_path, cfg.cell.as_ref())?.unwrap_or_default();
    let targets = cfg
        .targets
        .iter()
        .map(|t| {
            let (lo, hi) = plausible_bounds(t.parameter);
            Target::new(t.parameter, (t.lower.unwrap_or(lo), t.upper.unwrap_or(hi)))
        })
        .collect();
    let mut problem = EstimationProblem::new(data.measured, profile, targets, start, cfg.objective, cfg.initial_soc);
    problem.ocv = load_ocv(config_path, cfg.ocv.as_ref())?;
    problem.downsample = cfg.downsample;
    problem.sigma2_n_tilde = cfg.sigma2_n_tilde;
    problem.covariance = cfg.covariance;
    problem.length_scale_bounds = (cfg.length_scale_bounds[0], cfg.length_scale_bounds[1]);
    problem.validate().map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;

    let mut swarm = cfg.swarm;
    if let Some(s) = seed {
        swarm.seed = s;
    }
    let trace_path = trace.unwrap_or_else(|| output.with_extension("trace.csv"));
    match estimate_group(&problem, &swarm) {
        Ok(result) => {
            write_trace_csv(&result.trace, create(&trace_path)?).map_err(csv_err(&trace_path))?;
            write_text(output, &result.to_toml_string())
        }
        Err(EstimateError::NoFeasible { evaluations, trace }) => {
            write_trace_csv(&trace, create(&trace_path)?).map_err(csv_err(&trace_path))?;
            Err(CliError::Runtime(format!(
                "estimation failed: no feasible candidate in {evaluations} evaluations (trace kept in {})",
                trace_path.display()
            )))
        }
        Err(e @ (EstimateError::InvalidProblem(_) | EstimateError::Downsample { .. })) => {
            Err(CliError::Config(e.to_string()))
        }
        Err(e) => Err(CliError::Runtime(format!("estimation failed: {e}"))),
    }
}

fn cmd_experiment(config_path: &Path, out_dir: &Path, seed: Option<u64>, trials: Option<usize>) -> Result<(), CliError> {
    let mut cfg: ExperimentConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.trial.seed = s;
    }
    if let Some(n) = trials {
        cfg.n_trials = n;
    }
    cfg.truth.validate().map_err(|e| CliError::Config(format!("truth: {e}")))?;
    cfg.trial.validate().map_err(|e| CliError::Config(format!("trial: {e}")))?;
    if cfg.n_trials == 0 {
        return Err(CliError::Config("n_trials must be >= 1".into()));
    }
    let report = run_experiment(&cfg.truth, &cfg.trial, cfg.n_trials).map_err(|e| CliError::Runtime(e.to_string()))?;

    let path = |name: &str| out_dir.join(name);
    let p = path("parameters.csv");
    report.write_parameters_csv(create(&p)?).map_err(csv_err(&p))?;
    let p = path("rmse.csv");
    report.write_rmse_csv(create(&p)?).map_err(csv_err(&p))?;
    let p = path("seeds.csv");
    report.write_seeds_csv(create(&p)?).map_err(csv_err(&p))?;
    write_text(&path("summary.txt"), &report.render())?;
    let resolved = toml::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(&path("config.toml"), &resolved)?;
    print!("{}", report.render());
    if report.parameters.is_empty() {
        return Err(CliError::Runtime("every trial failed".into()));
    }
    Ok(())
}
