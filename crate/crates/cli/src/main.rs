//! `aggdiff`: stationary states, evolutions and minimizing movements of the
//! 1D aggregation-diffusion equation, plus the verification suite.
//!
//! Every subcommand prints a JSON summary on stdout. Exit codes: 0 success,
//! 1 numerical failure (an error or a failed check), 2 usage error.

mod commands;
mod config;
mod report;
mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use config::Settings;
use report::{Check, Summary};
use verify::{Module, Mutation};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Numerical(#[from] aggdiff::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            // An unwritable output location is a configuration problem.
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "aggdiff",
    version,
    about = "1D aggregation-diffusion laboratory"
)]
struct Cli {
    /// Worker threads for `limit-scan` and `verify` (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Experiment {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary state by fixed-point iteration, polished in Lagrangian coordinates.
    Steady(Experiment),
    /// Finite-volume evolution from an initial datum.
    Evolve(Experiment),
    /// Minimizing-movement (JKO) run in quantile coordinates.
    Jko(Experiment),
    /// Stationary states over a list of kernel orders, compared with the local limit.
    LimitScan(Experiment),
    /// Property suite with measured values against thresholds.
    Verify(VerifyArgs),
    /// Runs the experiment described by a config file with a `command` key.
    Run { config: PathBuf },
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Restrict to these modules (comma separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    only: Vec<Module>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Corrupt a constant to confirm the suite catches it.
    #[arg(long, value_enum, hide = true)]
    mutate: Option<Mutation>,
}

const COMMANDS: [&str; 4] = ["steady", "evolve", "jko", "limit-scan"];

fn experiment(name: &str, exp: Experiment) -> Result<Summary, CliError> {
    let file = exp.config.as_deref().map(Settings::from_file).transpose()?;
    if let Some(wanted) = file.as_ref().and_then(|f| f.command.as_deref()) {
        if wanted != name {
            return Err(CliError::Usage(format!(
                "config file is for `{wanted}`, not `{name}`"
            )));
        }
    }
    let mut cfg = Settings::resolve(file, exp.settings)?;
    cfg.command = Some(name.to_string());
    match name {
        "steady" => commands::steady(&cfg),
        "evolve" => commands::evolve(&cfg),
        "jko" => commands::jko(&cfg),
        _ => commands::limit_scan(&cfg),
    }
}

fn run_verify(args: VerifyArgs) -> Result<Summary, CliError> {
    let modules = if args.only.is_empty() {
        vec![
            Module::Special,
            Module::Grid,
            Module::Riesz,
            Module::Energy,
            Module::Steady,
            Module::Evolution,
            Module::Jko,
        ]
    } else {
        args.only
    };
    let reports = verify::run(&modules, args.seed, args.mutate)?;
    let checks: Vec<Check> = reports
        .iter()
        .flat_map(|r| {
            let module = serde_json::to_value(r.module).expect("enum serializes");
            let prefix = module.as_str().unwrap_or_default().to_string();
            r.checks.iter().map(move |c| Check {
                name: format!("{prefix}: {}", c.name),
                ..c.clone()
            })
        })
        .collect();
    let timings: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| {
            (
                serde_json::to_value(r.module)
                    .unwrap()
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                json!(r.seconds),
            )
        })
        .collect();
    Ok(Summary::new(
        "verify",
        checks,
        Vec::new(),
        json!({ "seed": args.seed, "timings": timings }),
    ))
}

fn dispatch(command: Command) -> Result<Summary, CliError> {
    match command {
        Command::Steady(e) => experiment("steady", e),
        Command::Evolve(e) => experiment("evolve", e),
        Command::Jko(e) => experiment("jko", e),
        Command::LimitScan(e) => experiment("limit-scan", e),
        Command::Verify(v) => run_verify(v),
        Command::Run { config } => {
            let name = Settings::from_file(&config)?
                .command
                .ok_or_else(|| CliError::Usage("config file has no `command` key".into()))?;
            match name.as_str() {
                "verify" => run_verify(VerifyArgs {
                    only: Vec::new(),
                    seed: 0,
                    mutate: None,
                }),
                n if COMMANDS.contains(&n) => experiment(
                    n,
                    Experiment {
                        config: Some(config),
                        settings: Settings::default(),
                    },
                ),
                other => Err(CliError::Usage(format!(
                    "unknown command `{other}` in config file"
                ))),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("usage error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // A closed pipe (e.g. `| head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{text}");
            for c in summary.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "check failed: {} = {:e} (want {})",
                    c.name, c.value, c.threshold
                );
            }
            ExitCode::from(if summary.ok { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
