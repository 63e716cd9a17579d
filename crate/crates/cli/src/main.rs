use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proca_lattice_cli::{exec_for, experiments, resolve, CliError, Experiment, Overrides};

#[derive(Parser)]
#[command(name = "proca-lattice", version, about = "Lattice Yang-Mills-Higgs and Proca field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run config; defaults are used for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `out` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, env = "PROCA_LATTICE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Metropolis chain for the YMH measure.
    SampleYmh,
    /// Draws of the lattice Proca field, free or with boundary data.
    SampleProca,
    /// Lifts a gauge snapshot to the algebra through the truncated log.
    Lift,
    /// Pairs a snapshot with a test form.
    Pair,
    /// YMH against Proca: exact TV, residual scan or KS trend.
    Compare,
    /// Covariance decay with distance.
    Decay,
    /// Lattice variance of a test form against its continuum limit.
    Scaling,
    /// Extreme eigenvalues of mI + d*d.
    Spectrum,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::SampleYmh => Experiment::SampleYmh,
            Command::SampleProca => Experiment::SampleProca,
            Command::Lift => Experiment::Lift,
            Command::Pair => Experiment::Pair,
            Command::Compare => Experiment::Compare,
            Command::Decay => Experiment::Decay,
            Command::Scaling => Experiment::Scaling,
            Command::Spectrum => Experiment::Spectrum,
        }
    }
}

fn configure_threads(threads: usize) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::invalid("threads", e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::invalid("threads", "must be at least 1"));
    }
    let over = Overrides { seed: cli.seed, out: cli.out };
    let cfg = resolve(cli.config.as_deref(), cli.command.experiment(), &over)?;
    configure_threads(threads)?;
    for path in experiments::run(&cfg, exec_for(threads))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
