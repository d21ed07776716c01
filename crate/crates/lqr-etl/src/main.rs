//! Command-line harness. Thin argument handling over the library: every
//! subcommand delegates to `lqr_etl::scenario` and the report writers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 self-check failure,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use lqr_etl::config::{system_to_toml, ScenarioConfig};
use lqr_etl::error::Error;
use lqr_etl::identification::ols_estimate;
use lqr_etl::report::{density_1d_csv, density_csv, records_csv, write_text};
use lqr_etl::scenario::{
    moments_report, run_etl_scenario, run_montecarlo, thresholds_report, MonteCarloOptions,
};
use lqr_etl::system::{ClosedLoopSystem, Trajectory};

#[derive(Parser)]
#[command(
    name = "lqr-etl",
    about = "Event-triggered learning for linear-quadratic control",
    version
)]
struct Cli {
    /// Override the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo rollouts (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: the config's [output].dir, else "out").
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Scenario configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario; writes series.csv, events.csv,
    /// summary.txt (and run.svg when enabled).
    Simulate,
    /// Monte Carlo detection-delay study; writes records.csv and the
    /// density grids.
    Montecarlo {
        /// Parallel rollouts (default: config [montecarlo].rollouts).
        #[arg(long)]
        rollouts: Option<usize>,
        /// Total system changes across rollouts (default: config value).
        #[arg(long)]
        changes: Option<usize>,
    },
    /// Exact cost statistics with the built-in cross-formula self-check.
    Moments {
        /// Cost window length (default: the trigger window).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Trigger thresholds for the configured system.
    Thresholds {
        /// Also print thresholds over a sweep of confidence levels.
        #[arg(long)]
        eta_sweep: bool,
    },
    /// Least-squares identification from a trajectory CSV
    /// (rows: step,x0..x{n-1},u0..u{q-1}; the last row's input is unused).
    Identify {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        state_dim: usize,
        #[arg(long)]
        input_dim: usize,
        /// Write the identified model as an explicit system TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // ignore the error if a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(4),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config <file>".into()))?;
    let mut cfg = ScenarioConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = Some(dir.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ScenarioConfig) -> PathBuf {
    PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| "out".into()))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(&cli)?;
            let report = run_etl_scenario(&cfg)?;
            let dir = out_dir(&cfg);
            report.write_series_csv(&dir.join("series.csv"))?;
            report.write_events_csv(&dir.join("events.csv"))?;
            report.write_summary(&dir.join("summary.txt"))?;
            if cfg.output.emit_svg {
                report.write_svg(&dir.join("run.svg"))?;
            }
            print!("{}", report.summary_text());
            println!("outputs written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Montecarlo { rollouts, changes } => {
            let cfg = load_config(&cli)?;
            let opts = MonteCarloOptions {
                rollouts: rollouts.unwrap_or(cfg.montecarlo.rollouts),
                total_changes: changes.unwrap_or(cfg.montecarlo.total_changes),
            };
            let result = run_montecarlo(&cfg, &opts)?;
            let dir = out_dir(&cfg);
            write_text(&dir.join("records.csv"), &records_csv(&result.records))?;
            write_text(&dir.join("density_joint.csv"), &density_csv(&result.joint))?;
            write_text(&dir.join("density_marginal.csv"), &density_1d_csv(&result.marginal))?;
            write_text(
                &dir.join("density_conditional.csv"),
                &density_csv(&result.conditional),
            )?;
            write_text(
                &dir.join("density_conditional_normalized.csv"),
                &density_csv(&result.conditional_normalized),
            )?;
            write_text(&dir.join("montecarlo_summary.txt"), &result.summary_text())?;
            print!("{}", result.summary_text());
            println!("outputs written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Moments { window } => {
            let cfg = load_config(&cli)?;
            let truth = cfg.build_system()?;
            let weights = cfg.build_weights(truth.state_dim(), truth.input_dim())?;
            let cl = ClosedLoopSystem::design(&truth, &weights)?;
            let report = moments_report(&cl, window.unwrap_or(cfg.trigger.window))?;
            print!("{}", report.table());
            if report.passes() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: cross-formula self-check failed");
                Ok(ExitCode::from(3))
            }
        }
        Command::Thresholds { eta_sweep } => {
            let cfg = load_config(&cli)?;
            print!("{}", thresholds_report(&cfg)?.table());
            if *eta_sweep {
                println!("eta sweep:");
                for eta in [0.5, 0.25, 0.1, 0.05, 0.01] {
                    let mut swept = cfg.clone();
                    swept.trigger.eta = eta;
                    print!("-- eta = {eta}\n{}", thresholds_report(&swept)?.table());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Identify { trajectory, state_dim, input_dim, out } => {
            let traj = read_trajectory_csv(trajectory, *state_dim, *input_dim)?;
            let model = ols_estimate(&traj)?;
            println!("samples used   : {}", model.sample_count);
            println!("residual rms   : {:.6e}", model.residual_rms);
            println!("A_hat          : {:?}", rows(&model.a_hat));
            println!("B_hat          : {:?}", rows(&model.b_hat));
            println!("V_hat          : {:?}", rows(model.v_hat.as_matrix()));
            if let Some(path) = out {
                let text =
                    system_to_toml(&model.a_hat, &model.b_hat, model.v_hat.as_matrix());
                write_text(path, &text)?;
                println!("model written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    lqr_etl::config::matrix_to_rows(m)
}

/// Reads `step,x0..x{n-1},u0..u{q-1}` rows; a non-numeric first line is
/// treated as a header. The final row's input columns are ignored.
fn read_trajectory_csv(path: &Path, state_dim: usize, input_dim: usize) -> Result<Trajectory, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < 1 + state_dim + input_dim {
            return Err(Error::Config(format!(
                "trajectory line {} has {} fields, need {}",
                lineno + 1,
                fields.len(),
                1 + state_dim + input_dim
            )));
        }
        let parse = |s: &str| -> Result<f64, Error> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{s}' on line {}", lineno + 1)))
        };
        let mut x = DVector::zeros(state_dim);
        for i in 0..state_dim {
            x[i] = parse(fields[1 + i])?;
        }
        let mut u = DVector::zeros(input_dim);
        for j in 0..input_dim {
            u[j] = parse(fields[1 + state_dim + j])?;
        }
        states.push(x);
        inputs.push(u);
    }
    if states.len() < 2 {
        return Err(Error::Config("trajectory file has fewer than two data rows".into()));
    }
    inputs.pop();
    Ok(Trajectory { states, inputs, seed: 0, start_index: 0 })
}
