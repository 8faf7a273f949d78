use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdectrl_cli::{exit_code, run, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "pdectrl", version, about = "Boundary control of unstable 1D PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration seed
    #[arg(long)]
    seed: Option<u64>,
    /// Agent variant: sac, nosac or nosac_training
    #[arg(long)]
    variant: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and report the plan without computing anything
    #[arg(long)]
    dry_run: bool,
    /// Also write the kernel table for the configured coefficient here
    #[arg(long, value_name = "PATH")]
    dump_kernel: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the backstepping imitation dataset
    GenData(Common),
    /// Pretrain the DeepONet on a generated dataset
    TrainDeeponet(Common),
    /// Train a soft actor-critic agent
    TrainRl(Common),
    /// Evaluate backstepping and the three agents, optionally under model mismatch
    Evaluate(Common),
    /// Simulate the backstepping and/or DeepONet closed loops
    SimulateBackstepping {
        #[command(flatten)]
        common: Common,
        /// backstepping, deeponet or both
        #[arg(long)]
        controller: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common, controller) = match cli.command {
        Command::GenData(c) => (Stage::GenData, c, None),
        Command::TrainDeeponet(c) => (Stage::TrainDeepONet, c, None),
        Command::TrainRl(c) => (Stage::TrainRl, c, None),
        Command::Evaluate(c) => (Stage::Evaluate, c, None),
        Command::SimulateBackstepping { common, controller } => (Stage::SimulateBackstepping, common, controller),
    };
    let opts = RunOptions {
        out: common.out,
        variant: common.variant,
        dry_run: common.dry_run,
        dump_kernel: common.dump_kernel,
        controller,
    };
    match run(stage, &common.config, common.seed, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
