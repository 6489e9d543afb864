#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{Precision, Profile};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "icon", version, about = "In-context operator learning: data, training, evaluation")]
struct Cli {
    /// Worker threads for data generation, training and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Preset bundle of defaults.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// JSON config file; replaces the profile defaults. Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted `key=value` override applied last, e.g. `train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate condition/QoI pairs for a list of problem families.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Family ids, e.g. `1,2,5-7`.
        #[arg(long)]
        families: Option<String>,
        /// Operators per family.
        #[arg(long = "M")]
        operators: Option<usize>,
        /// Condition/QoI pairs per operator.
        #[arg(long = "N")]
        pairs: Option<usize>,
    },
    /// Train the transformer on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Training families, e.g. `1-19`.
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, value_enum)]
        precision: Option<Precision>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run an evaluation protocol against a checkpoint.
    Eval(commands::EvalArgs),
    /// Print the prompt matrix built from stored records.
    Inspect(commands::InspectArgs),
}

pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, err) = match self {
            Failure::Config(e) => (2, e),
            Failure::Runtime(e) => (3, e),
        };
        eprintln!("error: {err:#}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            return Failure::Config(e.into()).report();
        }
    }
    let result = match cli.command {
        Command::Datagen { common, families, operators, pairs } => {
            commands::datagen(&common, families.as_deref(), operators, pairs)
        }
        Command::Train { common, data, families, steps, batch_size, precision, resume } => {
            commands::train(&common, commands::TrainFlags { data, families, steps, batch_size, precision, resume })
        }
        Command::Eval(args) => commands::eval(&args),
        Command::Inspect(args) => commands::inspect(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
