use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sim_cli::{cmd_eval, cmd_gen_data, cmd_pretrain, cmd_simulate, cmd_table1};

/// Federated BN-statistics adaptation simulator.
#[derive(Parser)]
#[command(name = "fedmix", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate source data and pre-train the server model.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Output model file (FMXM).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run R federated rounds and write rounds.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Pre-trained model file (FMXM).
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Parallel client legs per round.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the backbone parameter/transmission-size table.
    Table1,
    /// Generate the source evaluation split as an FMXD dataset file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the accuracy of a model on a dataset file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Pretrain { config, out } => cmd_pretrain(config, out),
        Cmd::Simulate {
            config,
            model,
            out_dir,
            jobs,
        } => cmd_simulate(config, model, out_dir, *jobs),
        Cmd::Table1 => cmd_table1(),
        Cmd::GenData { config, out } => cmd_gen_data(config, out),
        Cmd::Eval { model, data } => cmd_eval(model, data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedmix: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
