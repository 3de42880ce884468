use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pws_msf_cli::{run, Command, Overrides, EXIT_CONFIG};

/// Master stability functions for networks of piecewise-smooth oscillators.
///
/// Settings come from built-in defaults, then the `--config` JSON file, then flags.
/// Exit codes: 0 success, 1 validation failure, 2 numerical failure, 3 configuration error.
#[derive(Parser)]
#[command(name = "pws-msf", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Locate the periodic orbit and write its skeleton (orbit.json).
    Orbit(Common),
    /// Evaluate the master stability function over sigma (msf.csv, msf_max_modulus.csv).
    Msf(Common),
    /// Integrate the full network from a perturbed synchronous state (trajectory.csv, sync_error.csv).
    Simulate(Common),
    /// Compare full and reduced monodromy spectra (validation.json).
    Validate(Common),
    /// Five-sigma stability classification at step 1e-4 (repro.csv).
    ReproPaper(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single coupling strength.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Number of grid points, endpoints included.
    #[arg(long)]
    sigma_steps: Option<usize>,
    /// Fixed integration step.
    #[arg(long)]
    step: Option<f64>,
    /// Worker threads for sigma sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Negative control: assemble the full monodromy with wrong saltation matrices.
    #[arg(long, hide = true)]
    corrupt_saltation: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, common) = match cli.command {
        Sub::Orbit(c) => (Command::Orbit, c),
        Sub::Msf(c) => (Command::Msf, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Validate(c) => (Command::Validate, c),
        Sub::ReproPaper(c) => (Command::ReproPaper, c),
    };
    let overrides = Overrides {
        sigma: common.sigma,
        sigma_min: common.sigma_min,
        sigma_max: common.sigma_max,
        sigma_steps: common.sigma_steps,
        step: common.step,
        jobs: common.jobs,
        out_dir: common.out,
        corrupt_saltation: common.corrupt_saltation,
    };
    match run(command, common.config.as_deref(), &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
