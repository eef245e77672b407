use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpc_distill::cli::{self, EvaluateArgs, RunConfig};
use mpc_distill::Result;

#[derive(Parser)]
#[command(name = "mpc-distill", version, about = "Distil deterministic MPC solutions into an output feedback")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve sampled problems and write the labelled window dataset.
    Generate,
    /// Train one feedback per m variant.
    Train {
        /// Dataset CSV (or its JSON sidecar); defaults to OUT/dataset.csv.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Only this m variant.
        #[arg(long, value_name = "N")]
        m: Option<usize>,
        /// Also build the nominal dataset and train the nominal baseline.
        #[arg(long)]
        nominal: bool,
    },
    /// Closed-loop comparison against the ideal and nominal designs.
    Evaluate {
        /// Learned model JSON, repeatable; defaults to OUT/model_m*.json.
        #[arg(long = "model", value_name = "PATH")]
        models: Vec<PathBuf>,
        /// Nominal model JSON; defaults to OUT/nominal_model.json.
        #[arg(long, value_name = "PATH")]
        nominal_model: Option<PathBuf>,
        /// Train the nominal baseline first.
        #[arg(long)]
        nominal: bool,
        /// Only the model of this m variant.
        #[arg(long, value_name = "N")]
        m: Option<usize>,
        /// Add a policy replaying each scenario's ideal solution.
        #[arg(long)]
        ideal_replay: bool,
    },
    /// Write plot-ready tables from dataset, training and evaluation files.
    Report {
        #[arg(required = true, value_name = "FILE")]
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    match cli.command {
        Command::Generate => cli::cmd_generate(&cfg).map(drop),
        Command::Train { dataset, m, nominal } => cli::cmd_train(&cfg, dataset.as_deref(), m, nominal).map(drop),
        Command::Evaluate {
            models,
            nominal_model,
            nominal,
            m,
            ideal_replay,
        } => {
            let args = EvaluateArgs {
                models,
                nominal_model,
                train_nominal: nominal,
                ideal_replay,
                m_filter: m,
            };
            cli::cmd_evaluate(&cfg, &args).map(drop)
        }
        Command::Report { files } => cli::cmd_report(&cfg, &files).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
