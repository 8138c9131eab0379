use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Overrides;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<dagcsp::Error> for CliError {
    fn from(e: dagcsp::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "dagcsp", version, about = "Feasible-set sampling over graphs of constrained models")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct RunFlags {
    /// TOML config layered over the case defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample every node and train its surrogates.
    Propagate {
        #[arg(long)]
        case: Option<String>,
        /// Pass directions, e.g. "f", "b" or "fb".
        #[arg(long)]
        directions: Option<String>,
        /// Feasible samples wanted per node.
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the joint space inside the propagated node boxes.
    Reconstruct {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        target: Option<usize>,
        /// Also fit a joint classifier and solve the semi-infinite program.
        #[arg(long)]
        sip: bool,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plain rejection sampling of the whole graph.
    Baseline {
        #[arg(long)]
        case: Option<String>,
        #[arg(long, alias = "samples")]
        target: Option<usize>,
        #[arg(long)]
        sip: bool,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Acceptance and evaluation ratios of two finished runs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-node samples and surrogates of a propagation run.
    Export {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match cli.cmd {
        Cmd::Propagate { case, directions, samples, run, out } => {
            let flags = Overrides { case, directions, samples, budget: run.budget, seed: run.seed, target: None };
            let out = commands::out_or_default(out, "propagate");
            commands::cmd_propagate(run.config.as_deref(), &flags, &out, run.overwrite)
        }
        Cmd::Reconstruct { state, target, sip, run, out } => {
            let flags = Overrides { target, budget: run.budget, seed: run.seed, ..Default::default() };
            let out = commands::out_or_default(out, "reconstruct");
            commands::cmd_reconstruct(&state, run.config.as_deref(), &flags, &out, run.overwrite, sip)
        }
        Cmd::Baseline { case, target, sip, run, out } => {
            let flags = Overrides { case, target, budget: run.budget, seed: run.seed, ..Default::default() };
            let out = commands::out_or_default(out, "baseline");
            commands::cmd_baseline(run.config.as_deref(), &flags, &out, run.overwrite, sip)
        }
        Cmd::Compare { a, b, out } => commands::cmd_compare(&a, &b, out.as_deref()),
        Cmd::Export { state, out, overwrite } => commands::cmd_export(&state, &out, overwrite),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
