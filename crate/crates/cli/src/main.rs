use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use threshold_sparse::config::Config;
use threshold_sparse::pipeline::fit_full;
use threshold_sparse::simulation::experiment::run_experiment;
use threshold_sparse::simulation::summary::{
    read_replications_path, summarize, summary_markdown, write_csv_path,
};
use threshold_sparse::{CoefficientPair, Dataset, Error, IndicatorDirection, TwoStepFit};

const THREADS_ENV: &str = "THRESHOLD_SPARSE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "threshold-sparse", version, about = "Sparse regression with an unknown threshold")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads (0 = all cores). Falls back to the config file, then
    /// to THRESHOLD_SPARSE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the two-step estimator to a CSV with columns y, q and regressors.
    Fit {
        data: PathBuf,
        #[arg(short, long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set lambda=0.05`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Merge replication files into one summary table.
    Report {
        #[arg(required = true)]
        replications: Vec<PathBuf>,
        /// Also write the threshold profile of a `fit.json` as profile.csv.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(short, long, default_value = ".")]
        output_dir: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalFailure(_) | Error::NoConvergedGridPoint(_) | Error::ExperimentFailed { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedCoefficients {
    beta: Vec<f64>,
    delta: Vec<f64>,
}

impl From<&CoefficientPair> for NamedCoefficients {
    fn from(a: &CoefficientPair) -> Self {
        Self {
            beta: a.beta.clone(),
            delta: a.delta.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfilePoint {
    tau: f64,
    objective: f64,
    converged: bool,
    kkt_violation: f64,
}

/// Contents of `fit.json`.
#[derive(Debug, Serialize, Deserialize)]
struct FitOutput {
    n: usize,
    p: usize,
    features: Vec<String>,
    direction: IndicatorDirection,
    tau_hat: f64,
    alpha_hat: NamedCoefficients,
    lasso_objective: f64,
    lasso_kkt_violation: f64,
    tau_tilde: f64,
    alpha_tilde: NamedCoefficients,
    scad_objective: f64,
    scad_kkt_violation: f64,
    active: Vec<String>,
    grid_points: usize,
    grid_points_excluded: usize,
    profile: Vec<ProfilePoint>,
    runtime_ms: u64,
}

impl FitOutput {
    fn new(data: &Dataset, fit: &TwoStepFit, runtime_ms: u64) -> Self {
        let best = fit.lasso.profile.best();
        let features = (0..data.p())
            .map(|j| match data.feature_names() {
                Some(names) => names[j].clone(),
                None => format!("x{}", j + 1),
            })
            .collect();
        FitOutput {
            n: data.n(),
            p: data.p(),
            features,
            direction: fit.direction,
            tau_hat: fit.lasso.tau_hat,
            alpha_hat: (&fit.lasso.alpha_hat).into(),
            lasso_objective: fit.lasso.objective,
            lasso_kkt_violation: best.kkt_violation,
            tau_tilde: fit.tau_tilde,
            alpha_tilde: (&fit.alpha_tilde).into(),
            scad_objective: fit.scad_objective,
            scad_kkt_violation: fit.scad_kkt_violation,
            active: fit.active().indices().iter().map(|&j| data.coordinate_name(j)).collect(),
            grid_points: fit.lasso.grid.len(),
            grid_points_excluded: fit.lasso.profile.excluded,
            profile: profile_points(fit),
            runtime_ms,
        }
    }
}

fn profile_points(fit: &TwoStepFit) -> Vec<ProfilePoint> {
    fit.lasso
        .profile
        .records
        .iter()
        .map(|r| ProfilePoint {
            tau: r.tau,
            objective: r.objective,
            converged: r.converged,
            kkt_violation: r.kkt_violation,
        })
        .collect()
}

fn load_config(path: &Path, overrides: &[String]) -> Result<Config, Failure> {
    let mut cfg = Config::from_path(path)?;
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn resolve_threads(flag: Option<usize>, cfg: Option<&Config>) -> Result<usize, Failure> {
    if let Some(t) = flag {
        return Ok(t);
    }
    if let Some(t) = cfg.map(Config::threads).transpose()?.flatten() {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure {
            code: 2,
            message: format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"),
        }),
        Err(_) => Ok(0),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Failure {
        code: 2,
        message: format!("cannot start {threads} worker threads: {e}"),
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn cmd_fit(
    data_path: &Path,
    config_path: &Path,
    overrides: &[String],
    output_dir: &Path,
    threads: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_config(config_path, overrides)?;
    let threads = resolve_threads(threads, Some(&cfg))?;
    let data = Dataset::from_csv_path(data_path).map_err(|e| match e {
        Error::Io(io) => io_failure(data_path, io),
        other => other.into(),
    })?;
    let fit_config = cfg.fit_config(data.p(), None, IndicatorDirection::Greater)?;

    let start = Instant::now();
    let fit = thread_pool(threads)?.install(|| fit_full(&data, &fit_config))?;
    let out = FitOutput::new(&data, &fit, start.elapsed().as_millis() as u64);

    create_dir(output_dir)?;
    let json = serde_json::to_string_pretty(&out).expect("fit output serializes");
    write_text(&output_dir.join("fit.json"), &json)?;
    write_csv_path(&out.profile, output_dir.join("profile.csv"))?;
    println!(
        "tau_hat = {:.6}  tau_tilde = {:.6}  active = [{}]",
        out.tau_hat,
        out.tau_tilde,
        out.active.join(", ")
    );
    Ok(())
}

fn cmd_simulate(
    config_path: &Path,
    overrides: &[String],
    output_dir: &Path,
    threads: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_config(config_path, overrides)?;
    let threads = resolve_threads(threads, Some(&cfg))?;
    let experiment = cfg.experiment_config()?;
    log::info!(
        "running {} replications of {} (n = {}, p = {})",
        experiment.replications,
        experiment.label(),
        experiment.n,
        experiment.p
    );
    let out = run_experiment(&experiment, threads)?;
    create_dir(output_dir)?;
    write_csv_path(&out.records, output_dir.join("replications.csv"))?;
    write_csv_path(&out.timings, output_dir.join("timings.csv"))?;
    write_csv_path(&out.summary, output_dir.join("summary.csv"))?;
    let table = summary_markdown(&out.summary);
    write_text(&output_dir.join("summary.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_report(paths: &[PathBuf], fit: Option<&Path>, output_dir: &Path) -> Result<(), Failure> {
    let mut records = Vec::new();
    for path in paths {
        records.extend(read_replications_path(path).map_err(|e| match e {
            Error::Io(io) => io_failure(path, io),
            other => other.into(),
        })?);
    }
    let rows = summarize(&records)?;
    let profile = match fit {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            let parsed: FitOutput = serde_json::from_str(&text).map_err(|e| io_failure(path, e))?;
            Some(parsed.profile)
        }
        None => None,
    };
    create_dir(output_dir)?;
    let table = summary_markdown(&rows);
    write_text(&output_dir.join("summary.md"), &table)?;
    write_csv_path(&rows, output_dir.join("summary.csv"))?;
    if let Some(profile) = profile {
        write_csv_path(&profile, output_dir.join("profile.csv"))?;
    }
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match &cli.command {
        Command::Fit {
            data,
            config,
            overrides,
            output_dir,
        } => cmd_fit(data, config, overrides, output_dir, cli.threads),
        Command::Simulate {
            config,
            overrides,
            output_dir,
        } => cmd_simulate(config, overrides, output_dir, cli.threads),
        Command::Report {
            replications,
            fit,
            output_dir,
        } => cmd_report(replications, fit.as_deref(), output_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
