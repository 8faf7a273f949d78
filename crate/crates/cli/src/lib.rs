//! Pipeline orchestration behind the `pdectrl` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use pdectrl_core::{Error, Result};

pub use commands::RunOptions;
pub use config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainDeepONet,
    TrainRl,
    Evaluate,
    SimulateBackstepping,
}

/// Process exit status for a failed run: 1 for numerical trouble during a
/// computation, 2 for bad configuration, arguments or input files.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalFailure(_) | Error::EnvironmentFault { .. } | Error::NotReady { .. } => 1,
        _ => 2,
    }
}

/// Loads the configuration, applies the command-line overrides and runs one
/// stage.
pub fn run(stage: Stage, config: &PathBuf, seed: Option<u64>, opts: &RunOptions) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(path) = &opts.dump_kernel {
        commands::dump_kernel(&cfg, path)?;
    }
    match stage {
        Stage::GenData => commands::gen_data(&cfg, opts),
        Stage::TrainDeepONet => commands::train_deeponet(&cfg, opts),
        Stage::TrainRl => commands::train_rl(&cfg, opts),
        Stage::Evaluate => commands::evaluate(&cfg, opts),
        Stage::SimulateBackstepping => commands::simulate_backstepping(&cfg, opts),
    }
}
