//! `cteach`: command-line front end for collaborative super teaching
//! experiments.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric or convergence
//! failure (including a failed property check).

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Args, Parser, Subcommand};
use collab_teach::baselines::BaselineKind;
use collab_teach::checks::Property;
use collab_teach::harness::{self, ExperimentConfig, Outcome};
use collab_teach::TeachError;

static KEY_HELP: LazyLock<String> = LazyLock::new(ExperimentConfig::help);

#[derive(Parser)]
#[command(name = "cteach", version, about = "Collaborative super teaching experiments", after_help = KEY_HELP.as_str())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one key (repeatable); applied after the config file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV plus a .meta sidecar.
    #[command(after_help = KEY_HELP.as_str())]
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the full data and write a perturbed teaching target.
    #[command(after_help = KEY_HELP.as_str())]
    MakeTarget {
        #[command(flatten)]
        common: Common,
    },
    /// Run collaborative teaching at the configured budget.
    #[command(after_help = KEY_HELP.as_str())]
    Teach {
        #[command(flatten)]
        common: Common,
    },
    /// Run one comparison strategy at the configured budget.
    #[command(after_help = KEY_HELP.as_str())]
    Baseline {
        /// oblivious, random or bruteforce
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Score one teaching run at every budget fraction, with baselines.
    #[command(after_help = KEY_HELP.as_str())]
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run a self-generating property suite and write a JSON report.
    #[command(after_help = KEY_HELP.as_str())]
    Check {
        /// theorem1, duality, gradient or oracle_recovery
        property: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, TeachError> {
    let overrides = common
        .set
        .iter()
        .map(|s| harness::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    ExperimentConfig::load(common.config.as_deref(), &overrides).map_err(|e| e.in_stage("config"))
}

fn run(cli: Cli) -> Result<Outcome, TeachError> {
    match cli.command {
        Command::Generate { common } => harness::cmd_generate(&load(&common)?),
        Command::MakeTarget { common } => harness::cmd_make_target(&load(&common)?),
        Command::Teach { common } => harness::cmd_teach(&load(&common)?),
        Command::Sweep { common } => harness::cmd_sweep(&load(&common)?),
        Command::Baseline { kind, common } => {
            let kind: BaselineKind = kind.parse().map_err(|e: TeachError| e.in_stage("config"))?;
            harness::cmd_baseline(&load(&common)?, kind)
        }
        Command::Check { property, common } => {
            let property: Property = property.parse().map_err(|e: TeachError| e.in_stage("config"))?;
            harness::cmd_check(&load(&common)?, property).map(|(_, outcome)| outcome)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are validation errors; --help and --version are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("  {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
