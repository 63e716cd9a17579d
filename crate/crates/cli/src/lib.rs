//! Batch driver for the proca-lattice experiments.
//!
//! `proca-lattice <experiment> --config run.toml` parses and validates the
//! config, runs the experiment, and writes its artifacts under `out`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use proca_lattice::exec::Exec;

pub use config::{Experiment, RunConfig};
pub use error::CliError;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn resolve(
    config: Option<&std::path::Path>,
    experiment: Experiment,
    over: &Overrides,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("")?,
    };
    if let Some(s) = over.seed {
        cfg.seed = s;
    }
    if let Some(o) = &over.out {
        cfg.out = o.clone();
    }
    cfg.resolve(experiment)
}

/// One worker runs everything in index order; more workers use the pool.
pub fn exec_for(threads: usize) -> Exec {
    if threads <= 1 {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}
