use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridflow::commands::{self, McSettings};
use gridflow::{exit_code, CliError, CliResult};
use gridflow_core::io::bundle::{load_bundle, Overrides};
use gridflow_core::io::output::read_output;
use gridflow_core::optimization::Status;

/// Transient simulation and optimal control of coupled gas and power networks.
#[derive(Debug, Parser)]
#[command(name = "gridflow", version, about)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a problem directory and write an output document.
    Run {
        dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Diffusion replacing that of every stochastic load.
        #[arg(long)]
        sigma: Option<f64>,
        /// Time step in seconds.
        #[arg(long = "delta-t")]
        delta_t: Option<f64>,
    },
    /// Run seeded ensembles and print quantile bands as CSV.
    Mc {
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Diffusion levels, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.3,0.45")]
        sigma: Vec<f64>,
        /// Central band probabilities, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,0.9")]
        quantiles: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Master seed; run i uses master + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Series keys to aggregate, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        series: Vec<String>,
        /// CSV destination (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize compressor and valve controls.
    Optimize { dir: PathBuf },
    /// Generate schemas or reference them from input files.
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
    /// Print one series of an output document as CSV.
    Extract {
        file: PathBuf,
        key: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest deviation of each series column from a baseline run.
    MaxDeviation {
        baseline: PathBuf,
        #[arg(required = true)]
        ensemble: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for a stationary state and write problem/initial.json.
    InitSteady { dir: PathBuf },
}

#[derive(Debug, Subcommand)]
enum SchemaAction {
    /// Write every input schema into a directory.
    MakeFullFactory { out: PathBuf },
    /// Add `$schema` keys to the inputs of a problem directory.
    InsertKey { dir: PathBuf },
}

fn emit(text: &str, out: Option<PathBuf>) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(&path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Other(e.to_string())),
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Run {
            dir,
            seed,
            sigma,
            delta_t,
        } => {
            let outcome = commands::run(&dir, &Overrides { seed, sigma, delta_t })?;
            println!("{}", outcome.path.display());
            if let Some(message) = outcome.failure() {
                eprintln!("error: {message}");
                return Ok(exit_code::SOLVER);
            }
        }
        Command::Mc {
            dir,
            runs,
            sigma,
            quantiles,
            workers,
            seed,
            series,
            out,
        } => {
            let bundle = load_bundle(&dir)?;
            let settings = McSettings {
                runs,
                sigmas: sigma,
                levels: quantiles,
                workers,
                master_seed: seed,
                series,
            };
            let summaries = commands::monte_carlo(&bundle, &settings)?;
            for s in &summaries {
                if !s.failed.is_empty() {
                    eprintln!(
                        "sigma {}: {} of {} runs failed and were excluded",
                        s.sigma,
                        s.failed.len(),
                        runs
                    );
                }
            }
            emit(&commands::mc_csv(&summaries), out)?;
        }
        Command::Optimize { dir } => {
            let outcome = commands::optimize(&dir, &Overrides::default())?;
            println!("{}", outcome.path.display());
            if outcome.report.status == Status::Infeasible {
                eprintln!("error: no feasible controls found");
                return Ok(exit_code::INFEASIBLE);
            }
            if !outcome.report.audit.is_empty() {
                eprintln!(
                    "warning: {} bound violations between evaluated steps",
                    outcome.report.audit.len()
                );
            }
        }
        Command::Schema { action } => {
            let paths = match action {
                SchemaAction::MakeFullFactory { out } => commands::schema_factory(&out)?,
                SchemaAction::InsertKey { dir } => commands::schema_insert_keys(&dir)?,
            };
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Extract { file, key, out } => emit(&commands::extract(&file, &key)?, out)?,
        Command::MaxDeviation {
            baseline,
            ensemble,
            out,
        } => {
            let base = read_output(&baseline)?;
            let members = ensemble.iter().map(|p| read_output(p)).collect::<Result<Vec<_>, _>>()?;
            emit(&commands::max_deviation(&base, &members)?, out)?;
        }
        Command::InitSteady { dir } => println!("{}", commands::init_steady(&dir)?.display()),
    }
    Ok(exit_code::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Input(gridflow_core::Error::Invalid(list)) = &e {
                for item in list {
                    eprintln!("  {item}");
                }
            }
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
